#include <cmath>
#include <numeric>
#include <sstream>

#include "ambiseg/iterloop.hpp"

namespace ambiseg::loop {

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("train: epochs must be non-negative");
  if (batch == 0) throw std::invalid_argument("train: batch size must be positive");
  if (!(adam.lr > 0) || !(adam.eps > 0)) throw std::invalid_argument("train: lr and eps must be positive");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1)) {
    throw std::invalid_argument("train: moment decays must be in [0,1)");
  }
  loss.validate();
}

namespace {

constexpr std::uint64_t kShuffleStream = 0x5A1E;

void adam_step(net::Parameters& params, const diff::Gradients& grads, AdamState& st, const AdamConfig& a) {
  ++st.step;
  const Real c1 = 1.0 - std::pow(a.beta1, static_cast<Real>(st.step));
  const Real c2 = 1.0 - std::pow(a.beta2, static_cast<Real>(st.step));
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    auto [mi, fresh_m] = st.m.try_emplace(name, g.shape());
    auto [vi, fresh_v] = st.v.try_emplace(name, g.shape());
    Tensor& m = mi->second;
    Tensor& v = vi->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = a.beta1 * m[i] + (1 - a.beta1) * g[i];
      v[i] = a.beta2 * v[i] + (1 - a.beta2) * g[i] * g[i];
      p[i] -= a.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + a.eps);
    }
  }
}

Tensor stack_targets(const std::vector<const Mask*>& targets, const std::vector<std::size_t>& idx,
                     std::size_t heads) {
  const std::size_t H = targets[idx[0]]->height(), W = targets[idx[0]]->width(), P = H * W;
  Tensor t(Shape{idx.size(), heads, H, W});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const Mask& y = *targets[idx[b]];
    if (y.height() != H || y.width() != W || y.channels() != 1) {
      throw std::invalid_argument("train: target geometry differs within a batch");
    }
    for (std::size_t h = 0; h < heads; ++h) std::copy_n(y.storage().begin(), P, t.data() + (b * heads + h) * P);
  }
  return t;
}

using InputFn = std::function<diff::Bindings(const std::vector<std::size_t>&, int)>;

TrainResult train_core(net::Network& model, std::size_t count, const InputFn& inputs,
                       const std::vector<const Mask*>& targets, const TrainConfig& cfg, AdamState* state,
                       int first_epoch) {
  cfg.validate();
  if (count == 0) throw std::invalid_argument("train: empty dataset");
  if (targets.size() != count) throw std::invalid_argument("train: target count does not match dataset");
  TrainResult res;
  if (cfg.epochs == 0) return res;

  AdamState local;
  AdamState& st = state ? *state : local;
  const std::size_t heads = model.config().heads;
  std::vector<std::string> wrt;
  for (const auto& [name, _] : model.params()) {
    if (!cfg.use_scores && name.rfind("score.", 0) == 0) continue;
    wrt.push_back(name);
  }
  std::map<std::size_t, objective::BatchObjective> objectives;

  for (int e = 0; e < cfg.epochs; ++e) {
    const int t = first_epoch + e;
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, kShuffleStream, static_cast<std::uint64_t>(t)));
    rng.shuffle(order);
    Real epoch_total = 0;
    for (std::size_t start = 0, batch_no = 0; start < count; start += cfg.batch, ++batch_no) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(count, start + cfg.batch)));
      const std::size_t B = idx.size();
      const net::Graph& g = model.graph(B, net::Mode::Train);
      auto it = objectives.find(B);
      if (it == objectives.end()) {
        it = objectives.emplace(B, objective::build_batch_objective(g.masks, cfg.use_scores ? g.scores : diff::Expr{},
                                                                    cfg.loss)).first;
      }
      const auto& obj = it->second;

      diff::Bindings b = model.state_bindings();
      for (auto& [k, v] : inputs(idx, t)) b[k] = std::move(v);
      Tensor y = stack_targets(targets, idx, heads);
      b[objective::kTargetVar] = y;
      diff::Evaluator ev(std::move(b));
      Real loss = 0;
      diff::Gradients grads;
      try {
        const Tensor& masks = ev.value(g.masks);
        const Tensor scores = cfg.use_scores ? ev.value(g.scores) : Tensor{};
        const auto winners = objective::select_winners(masks, scores, y, cfg.loss.winner);
        ev.bind(objective::kAssignVar, objective::assignment_weights(winners, heads, t, cfg.loss));
        if (cfg.use_scores && cfg.loss.detach_score_target) {
          ev.bind(objective::kScoreTargetVar,
                  objective::score_targets(masks, y, cfg.loss.binarized_score_target));
        }
        loss = ev.value(obj.total).item();
        grads = ev.gradient(obj.total, wrt);
      } catch (const diff::NonFiniteError& err) {
        std::ostringstream os;
        os << "non-finite value in epoch " << t << ", batch " << batch_no << " (samples";
        for (auto i : idx) os << ' ' << i;
        os << "): " << err.what();
        throw NonFiniteLoss(os.str());
      }
      if (!std::isfinite(loss)) {
        throw NonFiniteLoss("non-finite loss in epoch " + std::to_string(t) + ", batch " + std::to_string(batch_no));
      }
      adam_step(model.params(), grads, st, cfg.adam);
      model.update_running_stats(g, ev);
      epoch_total += loss * static_cast<Real>(B);
      ++res.steps;
    }
    res.epoch_loss.push_back(epoch_total / static_cast<Real>(count));
  }
  return res;
}

}  // namespace

TrainResult train(net::Network& model, const std::vector<ImageExample>& data, const TrainConfig& cfg,
                  AdamState* state, int first_epoch) {
  std::vector<const Mask*> targets;
  for (const auto& ex : data) {
    if (!ex.image || !ex.target) throw std::invalid_argument("train: null example");
    targets.push_back(ex.target);
  }
  auto inputs = [&](const std::vector<std::size_t>& idx, int) {
    std::vector<const Raster*> imgs;
    for (auto i : idx) imgs.push_back(data[i].image);
    return model.image_bindings(imgs);
  };
  return train_core(model, data.size(), inputs, targets, cfg, state, first_epoch);
}

TrainResult train(net::Network& model, std::size_t count, const BundleSource& bundles,
                  const std::vector<const Mask*>& targets, const TrainConfig& cfg, AdamState* state,
                  int first_epoch) {
  auto inputs = [&](const std::vector<std::size_t>& idx, int epoch) {
    std::vector<net::ModalityBundle> owned;
    owned.reserve(idx.size());
    for (auto i : idx) owned.push_back(bundles(i, epoch));
    std::vector<const net::ModalityBundle*> ptrs;
    for (const auto& o : owned) ptrs.push_back(&o);
    return model.bundle_bindings(ptrs);
  };
  return train_core(model, count, inputs, targets, cfg, state, first_epoch);
}

}  // namespace ambiseg::loop
