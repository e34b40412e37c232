#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <optional>
#include <random>

#include "ambiseg/metrics.hpp"
#include "ambiseg/shell.hpp"
#include "naive_metrics.hpp"

namespace ambiseg::cli {
namespace {

using Gen = std::mt19937_64;

Mask blob(Gen& rng, std::size_t n) {
  std::uniform_real_distribution<Real> u(0.0, 1.0);
  const Real cy = u(rng) * n, cx = u(rng) * n, r = 2 + u(rng) * n / 3;
  Mask m = Mask::mask(n, n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) m(y, x) = std::hypot(y - cy, x - cx) < r ? 1.0 : 0.0;
  return m;
}

Mask pair_gt(Gen& rng, std::size_t n, int i) {
  if (i % 25 == 7) return Mask::mask(n, n);       // empty
  if (i % 25 == 13) return Mask::mask(n, n, 1.0);  // full
  return blob(rng, n);
}

// Noisy gt, uniform noise, 8-bit levels (thresholds land on pixel values) and
// binary predictions.
Mask pair_pred(Gen& rng, const Mask& gt, int i) {
  std::uniform_real_distribution<Real> u(0.0, 1.0);
  Mask p = gt;
  switch (i % 4) {
    case 0:
      for (auto& v : p.storage()) v = std::clamp(0.7 * v + 0.3 * u(rng), 0.0, 1.0);
      break;
    case 1:
      for (auto& v : p.storage()) v = u(rng);
      break;
    case 2:
      for (auto& v : p.storage()) v = std::min(std::floor(u(rng) * 256.0) / 255.0, 1.0);
      break;
    default:
      p = blob(rng, gt.height());
  }
  return p;
}

struct Options {
  std::string config, out, data, model, pred_dir, gt_dir, mode;
  std::optional<std::uint64_t> seed;
  std::optional<Real> scale;
  int instances = 50, pairs = 200;
  std::size_t size = 32;
};

shell::RunConfig make_config(const Options& o) {
  shell::RunConfig c = o.config.empty() ? shell::RunConfig{} : shell::load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.out = o.out;
  if (o.scale) c.scale = *o.scale;
  if (!o.mode.empty()) c.mode = metrics::selection_mode_from_string(o.mode);
  c.validate();
  return c;
}

nlohmann::json report_json(const metrics::MetricsReport& r) { return nlohmann::json::parse(metrics::to_json(r)); }

}  // namespace

bool OracleReport::pass() const {
  return std::all_of(max_diff.begin(), max_diff.end(), [&](const auto& kv) { return kv.second <= tolerance; });
}

OracleReport run_oracle(std::uint64_t seed, int pairs, std::size_t size) {
  OracleReport r;
  r.pairs = pairs;
  for (const char* m : {"f_measure_max", "mae", "s_measure", "e_measure", "iou_binary"}) r.max_diff[m] = 0;
  Gen rng(seed);
  auto upd = [&](const char* m, Real a, Real b) { r.max_diff[m] = std::max(r.max_diff[m], std::abs(a - b)); };
  for (int i = 0; i < pairs; ++i) {
    const Mask gt = pair_gt(rng, size, i);
    const Mask p = pair_pred(rng, gt, i);
    upd("f_measure_max", metrics::f_measure_max(p, gt), naive::f_measure_max(p, gt));
    upd("mae", metrics::mae(p, gt), naive::mae(p, gt));
    upd("s_measure", metrics::s_measure(p, gt), naive::s_measure(p, gt));
    upd("e_measure", metrics::e_measure(p, gt), naive::e_measure(p, gt));
    upd("iou_binary", metrics::iou_binary(p, gt), naive::iou_binary(p, gt));
  }
  return r;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ambiguity-aware salient segmentation toolkit", "ambiseg"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config, "run configuration (JSON)");
  app.add_option("--seed", o.seed, "global seed; determines every stochastic output");
  app.add_option("--out", o.out, "output directory");
  app.add_option("--scale", o.scale, "budget scale factor in (0, 1]");
  app.add_option("--mode", o.mode, "head selection for model evaluation")
      ->check(CLI::IsMember({"selected", "oracle_best"}));

  auto* gen = app.add_subcommand("generate", "write a generated dataset");
  auto* train = app.add_subcommand("train", "train the multi-mask image model");
  train->add_option("--data", o.data, "dataset directory (default: generate one)");
  auto* eval = app.add_subcommand("eval", "score predicted masks against ground truth");
  eval->add_option("pred_dir", o.pred_dir, "directory of predicted masks (<id>.png)");
  eval->add_option("gt_dir", o.gt_dir, "directory of ground-truth masks (<id>.png)");
  eval->add_option("--model", o.model, "checkpoint to evaluate on --data instead");
  eval->add_option("--data", o.data, "dataset directory for --model");
  auto* filter = app.add_subcommand("filter", "run the curation stages over a dataset");
  filter->add_option("--data", o.data, "dataset directory")->required();
  filter->add_option("--model", o.model, "image-model checkpoint for consistency and coverage");
  auto* loop = app.add_subcommand("loop", "run the iterative generation loop");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference checks of every primitive and loss");
  grad->add_option("--instances", o.instances, "random instances per check")->check(CLI::PositiveNumber);
  auto* oracle = app.add_subcommand("oracle", "compare metrics with the naive reference");
  oracle->add_option("--pairs", o.pairs, "random pairs")->check(CLI::PositiveNumber);
  oracle->add_option("--size", o.size, "mask side length")->check(CLI::Range(4, 1024));

  std::vector<std::string> rev(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
  std::reverse(rev.begin(), rev.end());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  const shell::Log log = [&err](const std::string& m) { err << "ambiseg: " << m << "\n" << std::flush; };
  try {
    if (gen->parsed()) {
      const auto r = shell::cmd_generate(make_config(o), log);
      out << nlohmann::json{{"count", r.count}, {"histogram", r.histogram}, {"manifest_hash", r.manifest_hash}}.dump()
          << "\n";
    } else if (train->parsed()) {
      const auto r = shell::cmd_train(make_config(o), o.data, log);
      out << nlohmann::json{{"final_loss", r.train.epoch_loss.empty() ? 0.0 : r.train.epoch_loss.back()},
                            {"selected", report_json(r.selected)},
                            {"oracle_best", report_json(r.oracle_best)}}
                 .dump()
          << "\n";
    } else if (eval->parsed()) {
      metrics::MetricsReport r;
      if (!o.model.empty()) {
        if (o.data.empty()) throw std::invalid_argument("eval --model needs --data <dataset dir>");
        if (!o.pred_dir.empty()) throw std::invalid_argument("eval takes either two mask directories or --model/--data");
        r = shell::cmd_eval_model(make_config(o), o.model, o.data, o.out);
      } else {
        if (o.pred_dir.empty() || o.gt_dir.empty()) {
          throw std::invalid_argument("eval needs <pred_dir> <gt_dir> or --model <ckpt> --data <dir>");
        }
        r = shell::cmd_eval_dirs(o.pred_dir, o.gt_dir, o.out);
      }
      out << metrics::to_json(r) << "\n";
    } else if (filter->parsed()) {
      const auto r = shell::cmd_filter(make_config(o), o.data, o.model, log);
      out << curation::to_json(r.summary).dump() << "\n";
    } else if (loop->parsed()) {
      const auto r = shell::cmd_loop(make_config(o), [&err](const std::string& m) { err << "ambiseg: " << m << "\n"; });
      nlohmann::json j;
      for (const auto& s : r.rounds) j["mean_score"].push_back(s.mean_score());
      j["labeler_iou"] = r.labeler_iou;
      j["selected_iou"] = r.selected.iou;
      j["oracle_best_iou"] = r.oracle_best.iou;
      out << j.dump() << "\n";
    } else if (grad->parsed()) {
      const std::uint64_t seed = o.seed.value_or(1);
      bool ok = true;
      for (const auto& e : shell::gradcheck_suite(seed, o.instances)) {
        out << std::left << std::setw(24) << e.name << " instances=" << e.instances << " worst=" << std::scientific
            << std::setprecision(3) << e.worst << " tol=" << e.tolerance << std::defaultfloat << " "
            << (e.pass() ? "ok" : "FAILED") << "\n";
        ok = ok && e.pass();
      }
      return ok ? 0 : 1;
    } else if (oracle->parsed()) {
      const auto r = run_oracle(o.seed.value_or(1), o.pairs, o.size);
      for (const auto& [m, d] : r.max_diff) {
        out << std::left << std::setw(16) << m << " max|fast-naive|=" << std::scientific << std::setprecision(3) << d
            << std::defaultfloat << " " << (d <= r.tolerance ? "ok" : "FAILED") << "\n";
      }
      return r.pass() ? 0 : 1;
    }
  } catch (const std::exception& e) {
    err << "ambiseg: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace ambiseg::cli
