#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ambiseg/dataset.hpp"
#include "ambiseg/image_io.hpp"
#include "ambiseg/rng.hpp"
#include "ambiseg/shell.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ambiseg::shell {
namespace {

constexpr std::uint64_t kGenerateStream = 0x6E4E;
constexpr std::uint64_t kTrainSetStream = 0x7A15;
constexpr std::uint64_t kTrainHeldoutStream = 0x7A16;

void say(const Log& log, const std::string& m) {
  if (log) log(m);
}

void prepare_out(const std::string& dir) {
  if (dir.empty()) throw std::invalid_argument("no output directory given (--out)");
  fs::create_directories(dir);
}

std::string join(const fs::path& dir, const std::string& name) { return (dir / name).string(); }

std::vector<Real> generation_weights(const RunConfig& cfg) {
  return cfg.category_weights.empty() ? std::vector<Real>(cfg.loop.categories, 1.0) : cfg.category_weights;
}

void fit_to(std::vector<scene::Sample>& samples, const net::ModelConfig& m) {
  for (auto& s : samples) {
    if (s.image.height() != m.height || s.image.width() != m.width) s = scene::fit(s, m.height, m.width);
  }
}

// Dataset entries as samples whose only candidate is the stored mask.
std::vector<scene::Sample> samples_of(std::vector<data::Entry> entries) {
  std::vector<scene::Sample> out;
  out.reserve(entries.size());
  for (auto& e : entries) {
    scene::Sample s;
    s.id = e.record.id;
    s.image = std::move(e.image);
    s.gt = std::move(e.mask);
    s.candidates = {s.gt};
    s.category = e.record.category;
    s.round = e.record.round;
    s.seed = e.record.seed;
    s.hard = e.record.hard;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<scene::Sample> load_samples(const std::string& dir) {
  if (!fs::is_directory(dir)) throw std::invalid_argument("dataset directory '" + dir + "' does not exist");
  if (!fs::exists(fs::path(dir) / "manifest.jsonl")) {
    throw std::invalid_argument("'" + dir + "' has no manifest.jsonl; expected the layout written by `generate`");
  }
  auto samples = samples_of(data::read_dataset(dir));
  if (samples.empty()) throw std::invalid_argument("dataset '" + dir + "' is empty");
  return samples;
}

void write_reports(const std::string& dir, const std::vector<const metrics::MetricsReport*>& reports) {
  json j = json::object();
  std::string csv = metrics::csv_header();
  for (const auto* r : reports) {
    j[metrics::to_string(r->mode)] = json::parse(metrics::to_json(*r, true));
    csv += metrics::to_csv_row(*r);
  }
  io::write_text(join(dir, "report.json"), j.dump(2) + "\n");
  io::write_text(join(dir, "report.csv"), csv);
}

std::map<std::string, fs::path> pngs_in(const std::string& dir, const char* role) {
  if (!fs::is_directory(dir)) throw std::invalid_argument(std::string(role) + " directory '" + dir + "' does not exist");
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out[e.path().stem().string()] = e.path();
  }
  if (out.empty()) throw std::invalid_argument(std::string(role) + " directory '" + dir + "' contains no .png masks");
  return out;
}

std::string listing(const std::vector<std::string>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size() && i < 5; ++i) s += (i ? ", " : "") + ids[i];
  if (ids.size() > 5) s += ", ... (" + std::to_string(ids.size()) + " in total)";
  return s;
}

}  // namespace

GenerateResult cmd_generate(const RunConfig& cfg, const Log& log) {
  cfg.validate();
  prepare_out(cfg.out);
  const auto l = cfg.resolved_loop();
  const auto categories = loop::loop_categories(l);
  const std::size_t n = cfg.scaled_samples();
  say(log, "generating " + std::to_string(n) + " samples over " + std::to_string(categories.size()) + " categories");
  const auto samples = scene::generate_dataset(categories, generation_weights(cfg), l.generator, n,
                                               derive_seed(cfg.seed, kGenerateStream), 0);
  data::write_dataset(cfg.out, samples);
  io::write_text(join(cfg.out, "config.json"), dump_config(cfg));

  GenerateResult r;
  r.count = samples.size();
  r.histogram.assign(categories.size(), 0);
  for (const auto& s : samples) ++r.histogram[static_cast<std::size_t>(s.category)];
  r.manifest_hash = data::manifest_hash(cfg.out);
  say(log, "wrote " + cfg.out + " (manifest " + r.manifest_hash + ")");
  return r;
}

TrainSummary cmd_train(const RunConfig& cfg, const std::string& data_dir, const Log& log) {
  cfg.validate();
  prepare_out(cfg.out);
  const auto l = cfg.resolved_loop();
  const auto categories = loop::loop_categories(l);

  std::vector<scene::Sample> train_set;
  if (data_dir.empty()) {
    train_set = scene::generate_dataset(categories, generation_weights(cfg), l.generator, cfg.scaled_samples(),
                                        derive_seed(cfg.seed, kTrainSetStream), 0);
  } else {
    train_set = load_samples(data_dir);
  }
  fit_to(train_set, l.student);

  std::vector<int> held;
  for (std::size_t c = 0; c < l.categories; ++c)
    for (std::size_t k = 0; k < l.heldout_per_category; ++k) held.push_back(static_cast<int>(c));
  auto heldout = scene::generate_for_categories(categories, held, l.generator,
                                                derive_seed(cfg.seed, kTrainHeldoutStream), 0);
  fit_to(heldout, l.student);

  std::vector<loop::ImageExample> ex;
  for (const auto& s : train_set) ex.push_back({&s.image, &s.gt});
  net::Network model(l.student);
  say(log, "training on " + std::to_string(ex.size()) + " samples for " + std::to_string(l.student_train.epochs) +
               " epochs");
  TrainSummary out;
  out.train = loop::train(model, ex, l.student_train);
  std::tie(out.selected, out.oracle_best) = loop::evaluate_model(model, heldout, "heldout");

  net::save_checkpoint(model, join(cfg.out, "student.ckpt"));
  json t{{"epoch_loss", out.train.epoch_loss}, {"steps", out.train.steps}, {"samples", ex.size()}};
  io::write_text(join(cfg.out, "train.json"), t.dump(2) + "\n");
  write_reports(cfg.out, {&out.selected, &out.oracle_best});
  io::write_text(join(cfg.out, "config.json"), dump_config(cfg));
  std::ostringstream m;
  m << "held-out IoU selected " << out.selected.iou << ", oracle best " << out.oracle_best.iou;
  say(log, m.str());
  return out;
}

metrics::MetricsReport cmd_eval_dirs(const std::string& pred_dir, const std::string& gt_dir, const std::string& out_dir) {
  const auto preds = pngs_in(pred_dir, "prediction");
  const auto gts = pngs_in(gt_dir, "ground-truth");
  std::vector<std::string> no_gt, no_pred;
  for (const auto& [id, p] : preds)
    if (!gts.count(id)) no_gt.push_back(id);
  for (const auto& [id, p] : gts)
    if (!preds.count(id)) no_pred.push_back(id);
  if (!no_gt.empty() || !no_pred.empty()) {
    std::string m = "prediction and ground-truth ids do not match:";
    if (!no_gt.empty()) m += " no ground truth for " + listing(no_gt) + " (in " + pred_dir + ");";
    if (!no_pred.empty()) m += " no prediction for " + listing(no_pred) + " (in " + gt_dir + ");";
    m += " masks are paired by file name";
    throw std::invalid_argument(m);
  }

  std::vector<MultiMaskOutput> outs;
  std::vector<Mask> truths;
  std::vector<std::string> ids;
  for (const auto& [id, p] : preds) {
    Raster pred, gt;
    try {
      pred = io::read_png(p.string());
      gt = io::read_mask(gts.at(id).string());
    } catch (const std::exception& e) {
      throw std::runtime_error("unreadable raster for id '" + id + "': " + e.what());
    }
    if (pred.channels() != 1) {
      throw std::invalid_argument("prediction '" + p.string() + "' is not a grayscale mask (" +
                                  std::to_string(pred.channels()) + " channels)");
    }
    if (!pred.same_geometry(gt)) {
      throw std::invalid_argument("size mismatch for id '" + id + "': prediction " + std::to_string(pred.height()) +
                                  "x" + std::to_string(pred.width()) + ", ground truth " +
                                  std::to_string(gt.height()) + "x" + std::to_string(gt.width()));
    }
    outs.push_back({{pred}, {1.0}});
    truths.push_back(std::move(gt));
    ids.push_back(id);
  }
  const std::string name = fs::path(gt_dir).filename().empty() ? fs::path(gt_dir).parent_path().filename().string()
                                                                : fs::path(gt_dir).filename().string();
  auto report = metrics::evaluate_dataset(outs, truths, metrics::SelectionMode::Selected, name, ids);
  if (!out_dir.empty()) {
    prepare_out(out_dir);
    write_reports(out_dir, {&report});
  }
  return report;
}

metrics::MetricsReport cmd_eval_model(const RunConfig& cfg, const std::string& checkpoint, const std::string& data_dir,
                                      const std::string& out_dir) {
  if (!fs::exists(checkpoint)) throw std::invalid_argument("checkpoint '" + checkpoint + "' does not exist");
  const net::Network model = net::load_checkpoint(checkpoint);
  if (model.config().input != net::InputKind::Image) {
    throw std::invalid_argument("checkpoint '" + checkpoint + "' is a labeler; eval takes an image model");
  }
  auto samples = load_samples(data_dir);
  fit_to(samples, model.config());
  std::vector<const Raster*> imgs;
  std::vector<Mask> gts;
  std::vector<std::string> ids;
  for (const auto& s : samples) {
    imgs.push_back(&s.image);
    gts.push_back(s.gt);
    ids.push_back(s.id);
  }
  const auto preds = model.predict(imgs);
  auto report = metrics::evaluate_dataset(preds, gts, cfg.mode, fs::path(data_dir).filename().string(), ids);
  if (!out_dir.empty()) {
    prepare_out(out_dir);
    write_reports(out_dir, {&report});
  }
  return report;
}

curation::FilterResult cmd_filter(const RunConfig& cfg, const std::string& data_dir, const std::string& checkpoint,
                                  const Log& log) {
  cfg.validate();
  const auto& fc = cfg.loop.filter;
  auto samples = load_samples(data_dir);

  curation::MaskPredictor predictor = curation::gt_oracle();
  std::optional<net::Network> model;
  if (!checkpoint.empty()) {
    if (!fs::exists(checkpoint)) throw std::invalid_argument("checkpoint '" + checkpoint + "' does not exist");
    model = net::load_checkpoint(checkpoint);
    if (model->config().input != net::InputKind::Image) {
      throw std::invalid_argument("checkpoint '" + checkpoint + "' is a labeler; filter takes an image model");
    }
    fit_to(samples, model->config());
    predictor = curation::image_model(*model);
  } else if (fc.consistency || fc.coverage) {
    throw std::invalid_argument(
        "filter: the consistency and coverage stages need a model; pass --model <checkpoint> or disable them in "
        "the curation config");
  }
  if (fc.coverage) {
    std::vector<std::string> empty;
    for (const auto& s : samples)
      if (count_nonzero(s.gt) == 0) empty.push_back(s.id);
    if (!empty.empty()) {
      throw std::invalid_argument("filter: coverage needs a non-empty reference mask; empty masks for " +
                                  listing(empty) + "; disable the coverage stage for such data");
    }
  }

  say(log, "filtering " + std::to_string(samples.size()) + " samples from " + data_dir);
  auto res = curation::filter_dataset(predictor, samples, fc);

  prepare_out(cfg.out);
  auto records = data::read_manifest(join(data_dir, "manifest.jsonl"));
  std::map<std::string, const curation::FilterVerdict*> by_id;
  for (const auto& v : res.verdicts) by_id[v.id] = &v;
  for (auto& r : records) {
    auto it = by_id.find(r.id);
    if (it == by_id.end()) continue;
    r.filter_status = it->second->kept ? "kept" : "rejected";
    r.filter_reason = it->second->reason;
  }
  data::write_manifest(join(cfg.out, "manifest.jsonl"), records);

  nlohmann::ordered_json j;
  j["summary"] = curation::to_json(res.summary);
  j["verdicts"] = nlohmann::ordered_json::array();
  for (const auto& v : res.verdicts) {
    nlohmann::ordered_json e;
    e["id"] = v.id;
    e["kept"] = v.kept;
    e["reason"] = v.reason;
    if (v.consistency) e["consistency"] = *v.consistency;
    if (v.components) e["components"] = *v.components;
    if (v.coverage) e["coverage"] = *v.coverage;
    if (v.presence) e["presence"] = *v.presence;
    j["verdicts"].push_back(e);
  }
  io::write_text(join(cfg.out, "filter.json"), j.dump(2) + "\n");
  io::write_text(join(cfg.out, "config.json"), dump_config(cfg));
  for (const auto& [stage, n] : res.summary.first_reason) say(log, "rejected by " + stage + ": " + std::to_string(n));
  say(log, "kept " + std::to_string(res.summary.kept) + " of " + std::to_string(res.summary.total));
  return res;
}

loop::PipelineResult cmd_loop(const RunConfig& cfg, const Log& log) {
  cfg.validate();
  prepare_out(cfg.out);
  io::write_text(join(cfg.out, "config.json"), dump_config(cfg));
  return loop::run_pipeline(cfg.resolved_loop(), cfg.out, log);
}

}  // namespace ambiseg::shell
