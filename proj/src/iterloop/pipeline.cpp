#include <cmath>
#include <cstdio>
#include <filesystem>

#include "ambiseg/image_io.hpp"
#include "ambiseg/iterloop.hpp"

namespace fs = std::filesystem;

namespace ambiseg::loop {

namespace {

constexpr std::uint64_t kCategoryStream = 0xCA75;
constexpr std::uint64_t kHeldoutStream = 0x4E1D;
constexpr std::uint64_t kSeedSetStream = 0x5EED;
constexpr std::uint64_t kRoundStream = 0x7000;

std::string numbered(const char* prefix, std::size_t i) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s_%06zu", prefix, i);
  return buf;
}

void fit_all(std::vector<scene::Sample>& v, const net::ModelConfig& m) {
  for (auto& s : v) s = scene::fit(s, m.height, m.width);
}

nlohmann::ordered_json report_json(const metrics::MetricsReport& r) {
  return nlohmann::ordered_json::parse(metrics::to_json(r));
}

}  // namespace

void LoopConfig::validate() const {
  if (categories == 0) throw std::invalid_argument("loop: categories must be positive");
  for (int h : hard_categories) {
    if (h < 0 || static_cast<std::size_t>(h) >= categories) {
      throw std::invalid_argument("loop: hard category " + std::to_string(h) + " out of range");
    }
  }
  if (rounds < 1) throw std::invalid_argument("loop: rounds must be at least 1");
  if (!(scale > 0)) throw std::invalid_argument("loop: scale must be positive");
  if (per_category == 0 || heldout_per_category == 0 || labeler_seed_set == 0) {
    throw std::invalid_argument("loop: budgets must be positive");
  }
  student.validate();
  if (student.input != net::InputKind::Image) throw std::invalid_argument("loop: student takes images");
  student_train.validate();
  labeler.validate();
  if (labeler.model.height != student.height || labeler.model.width != student.width) {
    throw std::invalid_argument("loop: labeler and student resolutions differ");
  }
  filter.validate();
}

Real RoundState::mean_score() const {
  if (scores.empty()) return 0.0;
  Real s = 0;
  for (Real v : scores) s += v;
  return s / static_cast<Real>(scores.size());
}

nlohmann::ordered_json to_json(const RoundState& s) {
  nlohmann::ordered_json j;
  j["round"] = s.round;
  j["weights"] = s.weights;
  j["allocation"] = s.allocation;
  j["kept"] = s.kept.size();
  j["rejected"] = s.rejected.size();
  j["label_iou"] = s.label_iou;
  j["filter"] = curation::to_json(s.filter);
  j["train_loss"] = s.train.epoch_loss;
  j["scores"] = s.scores;
  j["mean_score"] = s.mean_score();
  j["category_iou"] = s.category_iou;
  j["next_weights"] = s.next_weights;
  j["selected"] = report_json(s.selected);
  j["oracle_best"] = report_json(s.oracle_best);
  return j;
}

LoopContext::LoopContext(LoopConfig c) : cfg(std::move(c)) { cfg.validate(); }

std::pair<metrics::MetricsReport, metrics::MetricsReport> evaluate_model(
    const net::Network& model, const std::vector<scene::Sample>& samples, const std::string& dataset) {
  std::vector<const Raster*> imgs;
  std::vector<Mask> gts;
  std::vector<std::string> ids;
  for (const auto& s : samples) {
    imgs.push_back(&s.image);
    gts.push_back(s.gt);
    ids.push_back(s.id);
  }
  const auto preds = model.predict(imgs);
  return {metrics::evaluate_dataset(preds, gts, metrics::SelectionMode::Selected, dataset, ids),
          metrics::evaluate_dataset(preds, gts, metrics::SelectionMode::OracleBest, dataset, ids)};
}

std::vector<scene::CategorySpec> loop_categories(const LoopConfig& cfg) {
  return scene::make_categories(cfg.categories, cfg.hard_categories, derive_seed(cfg.seed, kCategoryStream));
}

void prepare(LoopContext& ctx) {
  const auto& cfg = ctx.cfg;
  auto log = [&](const std::string& m) {
    if (ctx.log) ctx.log(m);
  };
  ctx.categories = loop_categories(cfg);

  std::vector<int> held;
  for (std::size_t c = 0; c < cfg.categories; ++c)
    for (std::size_t k = 0; k < cfg.heldout_per_category; ++k) held.push_back(static_cast<int>(c));
  ctx.heldout = scene::generate_for_categories(ctx.categories, held, cfg.generator, derive_seed(cfg.seed, kHeldoutStream), 0);
  for (std::size_t i = 0; i < ctx.heldout.size(); ++i) ctx.heldout[i].id = numbered("heldout", i);
  fit_all(ctx.heldout, cfg.student);

  auto seed_set = scene::generate_dataset(ctx.categories, std::vector<Real>(cfg.categories, 1.0), cfg.generator,
                                          cfg.labeler_seed_set, derive_seed(cfg.seed, kSeedSetStream), 0);
  for (std::size_t i = 0; i < seed_set.size(); ++i) seed_set[i].id = numbered("seed", i);
  fit_all(seed_set, cfg.labeler.model);
  log("training labeler on " + std::to_string(seed_set.size()) + " seed samples");
  ctx.labeler = train_labeler(seed_set, cfg.labeler).model;
  ctx.student.emplace(cfg.student);
  ctx.adam = {};
  ctx.epochs_done = 0;
  ctx.pool.clear();
  ctx.pool_labels.clear();
}

RoundState run_round(LoopContext& ctx, int round, const std::vector<Real>& weights) {
  const auto& cfg = ctx.cfg;
  if (!ctx.labeler || !ctx.student) throw std::logic_error("run_round: context not prepared");
  if (weights.size() != cfg.categories) throw std::invalid_argument("run_round: weight count mismatch");
  auto log = [&](const std::string& m) {
    if (ctx.log) ctx.log("round " + std::to_string(round) + ": " + m);
  };
  RoundState st;
  st.round = round;
  st.weights = weights;

  const std::size_t per_cat = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<Real>(cfg.per_category) * cfg.scale)));
  if (round == 1) {
    st.allocation.assign(cfg.categories, per_cat);
  } else {
    st.allocation = allocate(per_cat * cfg.categories / 2, weights);
  }
  std::vector<int> cats;
  for (std::size_t c = 0; c < cfg.categories; ++c) cats.insert(cats.end(), st.allocation[c], static_cast<int>(c));
  auto samples = scene::generate_for_categories(ctx.categories, cats, cfg.generator,
                                                derive_seed(cfg.seed, kRoundStream, static_cast<std::uint64_t>(round)), round);
  fit_all(samples, cfg.student);

  // labels
  std::vector<Mask> labels;
  if (cfg.gt_labels) {
    for (const auto& s : samples) labels.push_back(s.gt);
  } else {
    labels = label_dataset(*ctx.labeler, samples, cfg.corruption, cfg.labeler.selection);
  }
  st.label_iou = decoding_iou(labels, samples);
  log(std::to_string(samples.size()) + " samples, label IoU " + std::to_string(st.label_iou));

  // filtering
  std::vector<std::size_t> keep;
  std::vector<curation::FilterVerdict> verdicts;
  if (cfg.filtering) {
    auto res = curation::filter_dataset(curation::labeler_model(*ctx.labeler, cfg.corruption, cfg.labeler.selection),
                                        samples, cfg.filter, &labels);
    keep = std::move(res.kept);
    verdicts = std::move(res.verdicts);
    st.filter = res.summary;
  } else {
    for (std::size_t i = 0; i < samples.size(); ++i) keep.push_back(i);
    st.filter.total = st.filter.kept = samples.size();
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto r = data::record_of(samples[i]);
    r.label = cfg.gt_labels ? "generator" : "labeler";
    if (cfg.filtering) {
      r.filter_status = verdicts[i].kept ? "kept" : "rejected";
      r.filter_reason = verdicts[i].reason;
      (verdicts[i].kept ? st.kept : st.rejected).push_back(samples[i].id);
    } else {
      st.kept.push_back(samples[i].id);
    }
    st.manifest.push_back(std::move(r));
  }
  log("kept " + std::to_string(st.kept.size()) + ", rejected " + std::to_string(st.rejected.size()));

  if (!cfg.accumulate) {
    ctx.pool.clear();
    ctx.pool_labels.clear();
  }
  for (auto i : keep) {
    ctx.pool.push_back(samples[i]);
    ctx.pool_labels.push_back(labels[i]);
  }

  // student
  if (cfg.from_scratch) {
    ctx.student.emplace(cfg.student);
    ctx.adam = {};
    ctx.epochs_done = 0;
  }
  if (!ctx.pool.empty()) {
    std::vector<ImageExample> ex;
    for (std::size_t i = 0; i < ctx.pool.size(); ++i) ex.push_back({&ctx.pool[i].image, &ctx.pool_labels[i]});
    TrainConfig tc = cfg.student_train;
    tc.seed = derive_seed(cfg.student_train.seed, kRoundStream, static_cast<std::uint64_t>(round));
    st.train = train(*ctx.student, ex, tc, &ctx.adam, ctx.epochs_done);
    ctx.epochs_done += tc.epochs;
    if (!st.train.epoch_loss.empty()) log("train loss " + std::to_string(st.train.epoch_loss.back()));
  }

  // scores and weights
  st.scores = category_scores(curation::image_model(*ctx.student), ctx.heldout, cfg.categories);
  st.next_weights = update_weights(st.scores, cfg.weights);
  auto [sel, orc] = evaluate_model(*ctx.student, ctx.heldout, "heldout");
  st.category_iou.assign(cfg.categories, 0.0);
  std::vector<std::size_t> cnt(cfg.categories, 0);
  for (std::size_t i = 0; i < ctx.heldout.size(); ++i) {
    const auto c = static_cast<std::size_t>(ctx.heldout[i].category);
    st.category_iou[c] += sel.samples[i].iou;
    ++cnt[c];
  }
  for (std::size_t c = 0; c < cfg.categories; ++c) st.category_iou[c] /= static_cast<Real>(cnt[c]);
  st.selected = std::move(sel);
  st.oracle_best = std::move(orc);
  log("mean kappa " + std::to_string(st.mean_score()) + ", held-out IoU " + std::to_string(st.selected.iou));

  if (!ctx.out_dir.empty()) {
    const fs::path dir = fs::path(ctx.out_dir) / "rounds" / std::to_string(round);
    fs::create_directories(dir);
    if (cfg.write_samples) {
      data::write_dataset(dir.string(), samples, st.manifest, &labels);
    } else {
      data::write_manifest((dir / "manifest.jsonl").string(), st.manifest);
    }
    nlohmann::ordered_json w;
    w["round"] = round;
    w["weights"] = st.weights;
    w["normalized"] = normalize(st.weights);
    w["allocation"] = st.allocation;
    w["scores"] = st.scores;
    w["next_weights"] = st.next_weights;
    w["next_normalized"] = normalize(st.next_weights);
    io::write_text((dir / "weights.json").string(), w.dump(2) + "\n");
    io::write_text((dir / "report.json").string(), to_json(st).dump(2) + "\n");
    io::write_text((dir / "report.csv").string(), metrics::csv_header() + "\n" + metrics::to_csv_row(st.selected) +
                                                      "\n" + metrics::to_csv_row(st.oracle_best) + "\n");
    net::save_checkpoint(*ctx.student, (dir / "student.ckpt").string());
  }
  return st;
}

PipelineResult run_pipeline(const LoopConfig& cfg, const std::string& out_dir,
                            std::function<void(const std::string&)> log) {
  LoopContext ctx(cfg);
  ctx.out_dir = out_dir;
  ctx.log = std::move(log);
  prepare(ctx);
  PipelineResult res;
  {
    const auto labels = label_dataset(*ctx.labeler, ctx.heldout, cfg.corruption, cfg.labeler.selection);
    res.labeler_iou = decoding_iou(labels, ctx.heldout);
    if (ctx.log) ctx.log("labeler held-out decoding IoU " + std::to_string(res.labeler_iou));
  }
  std::vector<Real> weights(cfg.categories, 1.0 / static_cast<Real>(cfg.categories));
  for (int r = 1; r <= cfg.rounds; ++r) {
    res.rounds.push_back(run_round(ctx, r, weights));
    weights = res.rounds.back().next_weights;
  }
  res.selected = res.rounds.back().selected;
  res.oracle_best = res.rounds.back().oracle_best;

  if (!out_dir.empty()) {
    const fs::path dir(out_dir);
    net::save_checkpoint(*ctx.labeler, (dir / "labeler.ckpt").string());
    net::save_checkpoint(*ctx.student, (dir / "student.ckpt").string());
    nlohmann::ordered_json j;
    j["labeler_iou"] = res.labeler_iou;
    j["weights_history"] = nlohmann::ordered_json::array();
    j["score_history"] = nlohmann::ordered_json::array();
    for (const auto& st : res.rounds) {
      j["weights_history"].push_back(st.weights);
      j["score_history"].push_back(st.scores);
    }
    j["selected"] = report_json(res.selected);
    j["oracle_best"] = report_json(res.oracle_best);
    io::write_text((dir / "report.json").string(), j.dump(2) + "\n");
    io::write_text((dir / "report.csv").string(), metrics::csv_header() + "\n" + metrics::to_csv_row(res.selected) +
                                                      "\n" + metrics::to_csv_row(res.oracle_best) + "\n");
  }
  return res;
}

}  // namespace ambiseg::loop
