#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "ambiseg/dataset.hpp"
#include "ambiseg/image_io.hpp"
#include "ambiseg/shell.hpp"
#include "cli.hpp"
#include "doctest.h"

using namespace ambiseg;
using namespace ambiseg::shell;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("ambiseg_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

RunConfig tiny(const std::string& out) {
  RunConfig c;
  c.out = out;
  c.samples = 24;
  c.loop.categories = 3;
  c.loop.generator.pixels = 256;
  c.loop.student.height = c.loop.student.width = 16;
  c.loop.student.widths = {4, 8};
  c.loop.student.fusion_width = 4;
  c.loop.student.heads = 2;
  c.loop.student_train.epochs = 2;
  c.loop.student_train.batch = 8;
  c.loop.labeler.model.height = c.loop.labeler.model.width = 16;
  c.loop.labeler.model.widths = {4, 8};
  c.loop.labeler.model.fusion_width = 4;
  c.loop.labeler.train.epochs = 2;
  c.loop.labeler.train.batch = 8;
  c.loop.filter.tau = 0.0;
  c.loop.rounds = 2;
  c.loop.per_category = 4;
  c.loop.heldout_per_category = 2;
  c.loop.labeler_seed_set = 12;
  return c;
}

int run_cli(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  args.insert(args.begin(), "ambiseg");
  std::ostringstream out, err;
  const int rc = cli::run(args, out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return rc;
}

void write_config(const std::string& path, const RunConfig& c) {
  std::ofstream(path) << dump_config(c);
}

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const std::invalid_argument& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("config round trip") {
  SUBCASE("defaults") {
    const RunConfig c;
    const std::string text = dump_config(c);
    CHECK(dump_config(parse_config(text)) == text);
  }
  SUBCASE("every field off its default") {
    RunConfig c = tiny("somewhere/else");
    c.seed = 0xFFFFFFFFFFFFFFFFull;
    c.scale = 0.1;
    c.category_weights = {0.1, 1.0 / 3.0, 2.5};
    c.mode = metrics::SelectionMode::OracleBest;
    c.loop.hard_categories = {0, 2};
    c.loop.student.bn_momentum = 0.3;
    c.loop.student_train.adam.lr = 2e-3;
    c.loop.student_train.adam.beta2 = 0.99;
    c.loop.student_train.use_scores = false;
    auto& l = c.loop.student_train.loss;
    l.focusing = 1.5;
    l.lambda_reg = 0.2;
    l.decay = 0.35;
    l.focal = objective::FocalVariant::PositiveOnly;
    l.winner = objective::WinnerRule::ArgmaxPredictedScore;
    l.normalize_focal = true;
    l.binarized_score_target = true;
    c.loop.generator.aspect_variety = false;
    c.loop.generator.ambiguity = {0.25, 3};
    c.loop.corruption.semantic_drop = 0.123456789;
    c.loop.corruption.concept_shift = 0.2;
    c.loop.filter.consistency = false;
    c.loop.filter.max_components = 7;
    c.loop.filter.transforms = {curation::Transform::FlipHorizontal};
    c.loop.filtering = false;
    c.loop.labeler.selection = {true, false, true};
    c.loop.labeler.redraw_corruption = false;
    c.loop.labeler.train.adam.lr = 3e-3;
    c.loop.weights.alpha = 4;
    c.loop.weights.clamp = false;
    c.loop.from_scratch = true;
    c.loop.accumulate = false;
    c.loop.gt_labels = true;
    c.loop.write_samples = false;

    const std::string text = dump_config(c);
    const RunConfig back = parse_config(text);
    CHECK(dump_config(back) == text);
    CHECK(back.seed == c.seed);
    CHECK(back.scale == c.scale);
    CHECK(back.category_weights == c.category_weights);
    CHECK(back.loop.corruption.semantic_drop == c.loop.corruption.semantic_drop);
    CHECK(back.resolved_loop().student == c.resolved_loop().student);
    CHECK(back.resolved_loop().labeler.model == c.resolved_loop().labeler.model);
    CHECK(back.loop.filter.transforms == c.loop.filter.transforms);
    CHECK(back.loop.student_train.loss.winner == objective::WinnerRule::ArgmaxPredictedScore);
    CHECK(back.loop.labeler.selection.generative == false);
  }
  SUBCASE("partial file keeps the remaining defaults") {
    const RunConfig c = parse_config(R"({"seed": 9, "loop": {"rounds": 5}})");
    CHECK(c.seed == 9);
    CHECK(c.loop.rounds == 5);
    CHECK(c.loop.per_category == RunConfig{}.loop.per_category);
  }
}

TEST_CASE("config rejects bad input with the offending key") {
  CHECK(error_of(R"({"sede": 1})").find("'sede'") != std::string::npos);
  CHECK(error_of(R"({"loss": {"lambda_msk": 1}})").find("'lambda_msk'") != std::string::npos);
  CHECK(error_of(R"({"labeler": {"train": {"loss": {"gamma": 1}}}})").find("'gamma'") != std::string::npos);
  CHECK(error_of(R"({"curation": {"tua": 0.5}})").find("'tua'") != std::string::npos);
  CHECK(error_of(R"({"loop": {"weights": {"alpha": 1, "delta": 2}}})").find("'delta'") != std::string::npos);
  CHECK(error_of(R"({"model": {"seed": 3}})").find("top-level seed") != std::string::npos);
  CHECK(error_of(R"({"train": {"epochs": "ten"}})").find("train.epochs") != std::string::npos);
  CHECK(error_of(R"({"precision": "float32"})").find("float64") != std::string::npos);
  CHECK(error_of(R"({"scale": 1.5})").find("scale") != std::string::npos);
  CHECK(error_of(R"({"scale": 0})").find("scale") != std::string::npos);
  CHECK(error_of(R"({"mode": "best"})").find("best") != std::string::npos);
  CHECK(error_of(R"({"categories": 3, "category_weights": [1, 2]})").find("category_weights") != std::string::npos);
  CHECK(error_of(R"({"loss": {"focal": "asymmetric"}})").find("loss.focal") != std::string::npos);
  CHECK(error_of(R"({"categories": 4, "hard_categories": [4]})").find("hard category") != std::string::npos);
  CHECK(error_of("{not json").find("not valid JSON") != std::string::npos);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), std::invalid_argument);
}

TEST_CASE("the top-level seed drives every derived seed") {
  RunConfig a, b;
  b.seed = 2;
  const auto la = a.resolved_loop(), lb = b.resolved_loop();
  CHECK(la.seed != lb.seed);
  CHECK(la.student.seed != lb.student.seed);
  CHECK(la.student_train.seed != lb.student_train.seed);
  CHECK(la.labeler.model.seed != lb.labeler.model.seed);
  CHECK(la.labeler.train.seed != lb.labeler.train.seed);
  RunConfig c;
  c.loop.corruption.semantic_drop = 0.9;
  CHECK(c.resolved_loop().labeler.corruption.semantic_drop == 0.9);
}

TEST_CASE("generate") {
  TempDir tmp("gen");
  RunConfig c = tiny(tmp / "a");
  c.seed = 5;
  const auto ra = cmd_generate(c);
  CHECK(ra.count == 24);
  CHECK(data::read_manifest(tmp / "a/manifest.jsonl").size() == 24);
  CHECK(fs::exists(tmp / "a/config.json"));

  c.out = tmp / "b";
  CHECK(cmd_generate(c).manifest_hash == ra.manifest_hash);
  c.out = tmp / "c";
  c.seed = 6;
  CHECK(cmd_generate(c).manifest_hash != ra.manifest_hash);

  SUBCASE("scale shrinks the sample count") {
    RunConfig s = tiny(tmp / "s");
    s.scale = 0.5;
    CHECK(cmd_generate(s).count == 12);
  }
  SUBCASE("category histogram follows the weights") {
    RunConfig h = tiny(tmp / "h");
    h.samples = 600;
    h.category_weights = {2, 1, 1};
    const auto r = cmd_generate(h);
    const double p[] = {0.5, 0.25, 0.25};
    for (int k = 0; k < 3; ++k) {
      const double mean = 600 * p[k], sd = std::sqrt(600 * p[k] * (1 - p[k]));
      CHECK(std::abs(static_cast<double>(r.histogram[k]) - mean) <= 4 * sd);
    }
  }
}

TEST_CASE("eval on mask directories") {
  TempDir tmp("eval");
  RunConfig c = tiny(tmp / "d");
  cmd_generate(c);
  const std::string masks = tmp / "d/masks";

  SUBCASE("identical directories") {
    const auto r = cmd_eval_dirs(masks, masks, tmp / "rep");
    CHECK(r.n == 24);
    CHECK(r.f_max == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.iou == 1.0);
    CHECK(r.mae == 0.0);
    CHECK(r.s_measure == doctest::Approx(1.0).epsilon(1e-5));
    // the threshold sweep includes t = 0, where every pixel is foreground
    CHECK(r.e_measure == doctest::Approx((255.0 + 0.25) / 256.0).epsilon(1e-6));
    CHECK(fs::exists(tmp / "rep/report.json"));
    CHECK(fs::exists(tmp / "rep/report.csv"));
  }
  SUBCASE("inverted masks") {
    fs::create_directories(tmp / "inv");
    for (const auto& e : fs::directory_iterator(masks)) {
      Mask m = io::read_mask(e.path().string());
      for (auto& v : m.storage()) v = 1.0 - v;
      io::write_mask(m, (tmp.path / "inv" / e.path().filename()).string());
    }
    const auto r = cmd_eval_dirs(tmp / "inv", masks);
    CHECK(r.mae == 1.0);
    CHECK(r.iou == 0.0);
  }
  SUBCASE("errors name the problem") {
    fs::create_directories(tmp / "partial");
    auto first = fs::directory_iterator(masks)->path();
    fs::copy_file(first, tmp.path / "partial" / first.filename());
    try {
      cmd_eval_dirs(tmp / "partial", masks);
      FAIL("expected an error");
    } catch (const std::invalid_argument& e) {
      CHECK(std::string(e.what()).find("no prediction for") != std::string::npos);
    }
    CHECK_THROWS_AS(cmd_eval_dirs(tmp / "missing", masks), std::invalid_argument);

    fs::create_directories(tmp / "small");
    for (const auto& e : fs::directory_iterator(masks)) {
      io::write_mask(Mask::mask(4, 4), (tmp.path / "small" / e.path().filename()).string());
    }
    try {
      cmd_eval_dirs(tmp / "small", masks);
      FAIL("expected an error");
    } catch (const std::invalid_argument& e) {
      CHECK(std::string(e.what()).find("size mismatch") != std::string::npos);
    }

    fs::create_directories(tmp / "junk");
    for (const auto& e : fs::directory_iterator(masks)) {
      std::ofstream((tmp.path / "junk" / e.path().filename()).string()) << "not a png";
    }
    try {
      cmd_eval_dirs(tmp / "junk", masks);
      FAIL("expected an error");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("unreadable") != std::string::npos);
    }
  }
}

TEST_CASE("train, model eval and filter") {
  TempDir tmp("train");
  RunConfig c = tiny(tmp / "data");
  cmd_generate(c);
  c.out = tmp / "model";
  const auto t = cmd_train(c, tmp / "data");
  CHECK(t.train.epoch_loss.size() == 2);
  for (const char* f : {"student.ckpt", "train.json", "report.json", "report.csv", "config.json"}) {
    CHECK(fs::exists(tmp / ("model/" + std::string(f))));
  }
  const auto sel = cmd_eval_model(c, tmp / "model/student.ckpt", tmp / "data");
  c.mode = metrics::SelectionMode::OracleBest;
  const auto orc = cmd_eval_model(c, tmp / "model/student.ckpt", tmp / "data");
  CHECK(sel.n == 24);
  CHECK(orc.iou >= sel.iou);
  CHECK(orc.mode == metrics::SelectionMode::OracleBest);

  c.out = tmp / "filtered";
  const auto f = cmd_filter(c, tmp / "data", tmp / "model/student.ckpt");
  CHECK(f.verdicts.size() == 24);
  const auto recs = data::read_manifest(tmp / "filtered/manifest.jsonl");
  REQUIRE(recs.size() == 24);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(recs[i].filter_status == (f.verdicts[i].kept ? "kept" : "rejected"));
    CHECK(recs[i].filter_reason == f.verdicts[i].reason);
  }
  CHECK(fs::exists(tmp / "filtered/filter.json"));

  CHECK_THROWS_AS(cmd_filter(c, tmp / "data"), std::invalid_argument);  // stages need a model
  RunConfig masks_only = c;
  masks_only.loop.filter.consistency = masks_only.loop.filter.coverage = false;
  CHECK(cmd_filter(masks_only, tmp / "data").summary.kept == 24);
  CHECK_THROWS_AS(cmd_eval_model(c, tmp / "nope.ckpt", tmp / "data"), std::invalid_argument);
  CHECK_THROWS_AS(cmd_train(c, tmp / "no_such_dataset"), std::invalid_argument);
}

TEST_CASE("command line") {
  TempDir tmp("cli");
  const std::string cfg = tmp / "tiny.json";
  write_config(cfg, tiny(tmp / "unused"));

  std::string out, err;
  CHECK(run_cli({}) != 0);
  CHECK(run_cli({"frobnicate"}) != 0);
  CHECK(run_cli({"--help"}) == 0);
  CHECK(run_cli({"generate", "--config", cfg, "--out", tmp / "g", "--seed", "3"}, &out) == 0);
  CHECK(out.find("manifest_hash") != std::string::npos);
  CHECK(run_cli({"generate", "--config", cfg, "--out", tmp / "g2", "--seed", "3"}) == 0);
  CHECK(data::manifest_hash(tmp / "g") == data::manifest_hash(tmp / "g2"));
  CHECK(run_cli({"generate", "--config", cfg, "--out", tmp / "g3", "--scale", "0.5"}) == 0);
  CHECK(data::read_manifest(tmp / "g3/manifest.jsonl").size() == 12);

  CHECK(run_cli({"eval", tmp / "g/masks", tmp / "g/masks"}, &out) == 0);
  CHECK(out.find("\"iou\": 1.0") != std::string::npos);
  CHECK(run_cli({"eval", tmp / "g/masks", tmp / "g3/masks"}, nullptr, &err) != 0);
  CHECK(err.find("no ground truth") != std::string::npos);
  CHECK(run_cli({"eval", tmp / "g/masks"}) != 0);

  CHECK(run_cli({"generate", "--config", tmp / "missing.json"}, nullptr, &err) != 0);
  CHECK(err.find("cannot open") != std::string::npos);
  CHECK(run_cli({"generate", "--config", cfg, "--scale", "2", "--out", tmp / "x"}, nullptr, &err) != 0);
  CHECK(run_cli({"eval", "--mode", "best", "a", "b"}) != 0);
  CHECK(run_cli({"filter", "--out", tmp / "f"}) != 0);  // --data is required
  CHECK(run_cli({"filter", "--config", cfg, "--data", tmp / "g", "--out", tmp / "f"}, nullptr, &err) != 0);
  CHECK(err.find("--model") != std::string::npos);

  CHECK(run_cli({"oracle", "--pairs", "20"}, &out) == 0);
  CHECK(out.find("s_measure") != std::string::npos);
  CHECK(run_cli({"gradcheck", "--instances", "2"}, &out) == 0);
  CHECK(out.find("FAILED") == std::string::npos);
}

TEST_CASE("loop runs are reproducible from the command line") {
  TempDir tmp("loop");
  const std::string cfg = tmp / "tiny.json";
  write_config(cfg, tiny(tmp / "unused"));
  REQUIRE(run_cli({"loop", "--config", cfg, "--out", tmp / "a", "--seed", "11"}) == 0);
  REQUIRE(run_cli({"loop", "--config", cfg, "--out", tmp / "b", "--seed", "11"}) == 0);
  for (const char* f : {"report.json", "report.csv", "rounds/1/manifest.jsonl", "rounds/2/manifest.jsonl",
                        "rounds/1/weights.json", "rounds/2/weights.json", "rounds/2/report.json"}) {
    INFO(f);
    CHECK(io::file_hash(tmp / ("a/" + std::string(f))) == io::file_hash(tmp / ("b/" + std::string(f))));
  }
  REQUIRE(run_cli({"loop", "--config", cfg, "--out", tmp / "c", "--seed", "12"}) == 0);
  CHECK(io::file_hash(tmp / "a/rounds/1/manifest.jsonl") != io::file_hash(tmp / "c/rounds/1/manifest.jsonl"));
}
