#include <cmath>
#include <stdexcept>

#include "ambiseg/netmodel.hpp"
#include "ambiseg/rng.hpp"

namespace ambiseg::net {

using diff::Expr;

void ModelConfig::validate() const {
  if (heads < 1) throw std::invalid_argument("model: heads must be >= 1");
  if (widths.empty()) throw std::invalid_argument("model: at least one encoder stage required");
  for (auto w : widths)
    if (w == 0) throw std::invalid_argument("model: encoder widths must be positive");
  if (fusion_width == 0 || height == 0 || width == 0) {
    throw std::invalid_argument("model: sizes must be positive");
  }
  const std::size_t div = std::size_t{1} << (widths.size() - 1);
  if (height % div != 0 || width % div != 0) {
    throw std::invalid_argument("model: input " + std::to_string(height) + "x" +
                                std::to_string(width) + " not divisible by " +
                                std::to_string(div) + " for " + std::to_string(widths.size()) +
                                " stages");
  }
  if (input == InputKind::Image && in_channels == 0) {
    throw std::invalid_argument("model: in_channels must be positive");
  }
  if (input == InputKind::Modalities) {
    const auto& m = modalities;
    if (m.semantic_channels == 0 || m.generative_channels == 0 || m.concept_channels == 0 ||
        m.generative_factor == 0 || height % m.generative_factor || width % m.generative_factor) {
      throw std::invalid_argument("model: invalid modality configuration");
    }
  }
  if (!(bn_momentum > 0 && bn_momentum <= 1 && bn_eps > 0)) {
    throw std::invalid_argument("model: invalid batch-norm settings");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{
      {"height", c.height},
      {"width", c.width},
      {"input", c.input == InputKind::Image ? "image" : "modalities"},
      {"in_channels", c.in_channels},
      {"widths", c.widths},
      {"fusion_width", c.fusion_width},
      {"heads", c.heads},
      {"seed", c.seed},
      {"semantic_channels", c.modalities.semantic_channels},
      {"generative_channels", c.modalities.generative_channels},
      {"concept_channels", c.modalities.concept_channels},
      {"generative_factor", c.modalities.generative_factor},
      {"bn_momentum", c.bn_momentum},
      {"bn_eps", c.bn_eps},
  };
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const auto& v = it.value();
    if (k == "height") c.height = v.get<std::size_t>();
    else if (k == "width") c.width = v.get<std::size_t>();
    else if (k == "input") {
      const auto s = v.get<std::string>();
      if (s == "image") c.input = InputKind::Image;
      else if (s == "modalities") c.input = InputKind::Modalities;
      else throw std::invalid_argument("model.input must be 'image' or 'modalities', got '" + s + "'");
    } else if (k == "in_channels") c.in_channels = v.get<std::size_t>();
    else if (k == "widths") c.widths = v.get<std::vector<std::size_t>>();
    else if (k == "fusion_width") c.fusion_width = v.get<std::size_t>();
    else if (k == "heads") c.heads = v.get<std::size_t>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else if (k == "semantic_channels") c.modalities.semantic_channels = v.get<std::size_t>();
    else if (k == "generative_channels") c.modalities.generative_channels = v.get<std::size_t>();
    else if (k == "concept_channels") c.modalities.concept_channels = v.get<std::size_t>();
    else if (k == "generative_factor") c.modalities.generative_factor = v.get<std::size_t>();
    else if (k == "bn_momentum") c.bn_momentum = v.get<Real>();
    else if (k == "bn_eps") c.bn_eps = v.get<Real>();
    else throw std::invalid_argument("unknown model config key '" + k + "'");
  }
}

namespace {

void add_conv(std::map<std::string, Shape>& out, const std::string& name, std::size_t cin,
              std::size_t cout, std::size_t k) {
  out[name + ".w"] = Shape{cout, cin, k, k};
  out[name + ".b"] = Shape{cout};
}

std::size_t encoder_input_channels(const ModelConfig& cfg) {
  return cfg.input == InputKind::Image ? cfg.in_channels : cfg.fusion_width;
}

std::string stage(const char* base, std::size_t s) { return base + std::to_string(s); }

// Parameters are variables named after their map key.
Expr p(const std::string& name, const Shape& shape) { return diff::variable(name, shape); }

Expr conv(const Expr& x, const std::string& name, std::size_t cout, std::size_t k,
          int stride = 1) {
  const std::size_t cin = x.shape()[1];
  return diff::conv2d(x, p(name + ".w", Shape{cout, cin, k, k}), p(name + ".b", Shape{cout}),
                      stride);
}

Expr residual_unit(const Expr& x, const std::string& name) {
  const std::size_t f = x.shape()[1];
  Expr h = conv(diff::relu(x), name + ".conva", f, 3);
  h = conv(diff::relu(h), name + ".convb", f, 3);
  return x + h;
}

Expr normalize(const Expr& x, const std::string& prefix, const ModelConfig& cfg, Mode mode,
               std::vector<BatchNormSite>* sites) {
  const Shape c{x.shape()[1]};
  Expr g = p(prefix + ".gamma", c), b = p(prefix + ".beta", c);
  if (sites) sites->push_back({x, prefix});
  if (mode == Mode::Train) return diff::batch_norm(x, g, b, cfg.bn_eps);
  return diff::batch_norm(x, g, b, diff::variable(prefix + ".mean", c),
                          diff::variable(prefix + ".var", c), cfg.bn_eps);
}

}  // namespace

std::map<std::string, Shape> parameter_shapes(const ModelConfig& cfg) {
  std::map<std::string, Shape> out;
  const std::size_t F = cfg.fusion_width, N = cfg.heads;
  if (cfg.input == InputKind::Modalities) {
    const auto& m = cfg.modalities;
    const std::pair<const char*, std::size_t> branches[] = {
        {"mod.sem", m.semantic_channels}, {"mod.gen", m.generative_channels},
        {"mod.con", m.concept_channels}};
    for (const auto& [name, ch] : branches) {
      add_conv(out, std::string(name) + ".proj", ch, F, 3);
      out[std::string(name) + ".bn.gamma"] = Shape{F};
      out[std::string(name) + ".bn.beta"] = Shape{F};
    }
    add_conv(out, "mod.mix.conv", 3 * F, F, 3);
    add_conv(out, "mod.mix.out", F, F, 1);
  }
  std::size_t cin = encoder_input_channels(cfg);
  for (std::size_t s = 0; s < cfg.widths.size(); ++s) {
    add_conv(out, stage("enc", s) + ".conva", cin, cfg.widths[s], 3);
    add_conv(out, stage("enc", s) + ".convb", cfg.widths[s], cfg.widths[s], 3);
    add_conv(out, stage("reasm", s), cfg.widths[s], F, 1);
    add_conv(out, stage("dec", s) + ".conva", F, F, 3);
    add_conv(out, stage("dec", s) + ".convb", F, F, 3);
    cin = cfg.widths[s];
  }
  add_conv(out, "mask.conv", F, F, 3);
  add_conv(out, "mask.out", F, N, 1);
  add_conv(out, "score.fc1", F, F, 1);
  add_conv(out, "score.fc2", F, N, 1);
  return out;
}

namespace {

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::pair<Parameters, Parameters> init_parameters(const ModelConfig& cfg) {
  cfg.validate();
  Parameters params, buffers;
  for (const auto& [name, shape] : parameter_shapes(cfg)) {
    Tensor t(shape, 0.0);
    if (ends_with(name, ".gamma")) {
      t.fill(1.0);
    } else if (ends_with(name, ".w") && name.rfind("mod.mix.out", 0) != 0) {
      const std::size_t fan_in = shape[1] * shape[2] * shape[3];
      Real sd = std::sqrt(2.0 / static_cast<Real>(fan_in));
      // prediction layers start near zero logits
      if (name == "mask.out.w" || name == "score.fc2.w") sd *= 0.1;
      Rng rng(derive_seed(cfg.seed, name_hash(name)));
      for (auto& v : t.storage()) v = sd * rng.normal();
    }
    params.emplace(name, std::move(t));
  }
  // biases: uniform in +-1/sqrt(fan_in), except the zero-initialized fusion output
  for (auto& [name, t] : params) {
    if (!ends_with(name, ".b") || name.rfind("mod.mix.out", 0) == 0) continue;
    const Shape& ws = params.at(name.substr(0, name.size() - 2) + ".w").shape();
    const Real bound = 1.0 / std::sqrt(static_cast<Real>(ws[1] * ws[2] * ws[3]));
    Rng rng(derive_seed(cfg.seed, name_hash(name)));
    for (auto& v : t.storage()) v = rng.uniform(-bound, bound);
  }
  if (cfg.input == InputKind::Modalities) {
    for (const char* b : {"mod.sem.bn", "mod.gen.bn", "mod.con.bn"}) {
      buffers.emplace(std::string(b) + ".mean", Tensor(Shape{cfg.fusion_width}, 0.0));
      buffers.emplace(std::string(b) + ".var", Tensor(Shape{cfg.fusion_width}, 1.0));
    }
  }
  return {std::move(params), std::move(buffers)};
}

Expr fuse_modalities(const ModelConfig& cfg, const Expr& semantic, const Expr& generative,
                     const Expr& attention, Mode mode, std::vector<BatchNormSite>* sites) {
  const auto& m = cfg.modalities;
  const std::size_t F = cfg.fusion_width;
  auto check = [](const Expr& x, std::size_t ch, const char* what) {
    if (x.shape().rank() != 4 || x.shape()[1] != ch) {
      throw diff::ShapeError(std::string("fuse_modalities: ") + what + " expects " +
                             std::to_string(ch) + " channels, got " + x.shape().str());
    }
  };
  check(semantic, m.semantic_channels, "semantic");
  check(generative, m.generative_channels, "generative");
  check(attention, m.concept_channels, "concept");
  const std::size_t H = semantic.shape()[2], W = semantic.shape()[3];

  Expr sem = normalize(conv(semantic, "mod.sem.proj", F, 3), "mod.sem.bn", cfg, mode, sites);
  Expr gen = normalize(conv(generative, "mod.gen.proj", F, 3), "mod.gen.bn", cfg, mode, sites);
  Expr con = normalize(conv(attention, "mod.con.proj", F, 3), "mod.con.bn", cfg, mode, sites);
  if (gen.shape()[2] != H || gen.shape()[3] != W) gen = diff::resize_bilinear(gen, H, W);
  if (con.shape()[2] != H || con.shape()[3] != W) con = diff::resize_bilinear(con, H, W);
  Expr mix = diff::relu(conv(diff::concat_channels({sem, gen, con}), "mod.mix.conv", F, 3));
  mix = conv(mix, "mod.mix.out", F, 1);
  return sem + mix;
}

Graph build_graph(const ModelConfig& cfg, std::size_t batch, Mode mode) {
  cfg.validate();
  if (batch == 0) throw std::invalid_argument("build_graph: batch must be positive");
  Graph g;
  g.batch = batch;
  g.mode = mode;
  const std::size_t H = cfg.height, W = cfg.width, F = cfg.fusion_width, N = cfg.heads;

  Expr x;
  if (cfg.input == InputKind::Image) {
    x = diff::variable(kImageVar, Shape{batch, cfg.in_channels, H, W});
  } else {
    const auto& m = cfg.modalities;
    Expr sem = diff::variable(kSemanticVar, Shape{batch, m.semantic_channels, H, W});
    Expr gen = diff::variable(
        kGenerativeVar,
        Shape{batch, m.generative_channels, H / m.generative_factor, W / m.generative_factor});
    Expr con = diff::variable(kConceptVar, Shape{batch, m.concept_channels, H, W});
    g.fused = fuse_modalities(cfg, sem, gen, con, mode, &g.batch_norms);
    x = g.fused;
  }

  std::vector<Expr> reassembled;
  for (std::size_t s = 0; s < cfg.widths.size(); ++s) {
    x = diff::relu(conv(x, stage("enc", s) + ".conva", cfg.widths[s], 3, s == 0 ? 1 : 2));
    x = diff::relu(conv(x, stage("enc", s) + ".convb", cfg.widths[s], 3));
    reassembled.push_back(conv(x, stage("reasm", s), F, 1));
  }

  const std::size_t deepest = cfg.widths.size() - 1;
  Expr fused = residual_unit(reassembled[deepest], stage("dec", deepest));
  const Expr deepest_fused = fused;
  for (std::size_t s = deepest; s-- > 0;) {
    const auto& r = reassembled[s];
    Expr up = diff::resize_bilinear(fused, r.shape()[2], r.shape()[3]);
    fused = residual_unit(up + r, stage("dec", s));
  }

  Expr logits = conv(diff::relu(conv(fused, "mask.conv", F, 3)), "mask.out", N, 1);
  g.masks = diff::clamp(diff::sigmoid(logits), 1e-6, 1.0 - 1e-6).labelled("masks");

  Expr pooled = diff::global_mean_pool(deepest_fused);
  Expr h = diff::relu(conv(pooled, "score.fc1", F, 1));
  g.scores = diff::sigmoid(conv(h, "score.fc2", N, 1)).labelled("scores");
  return g;
}

Network::Network(ModelConfig cfg) : cfg_(std::move(cfg)) {
  auto [p, b] = init_parameters(cfg_);
  params_ = std::move(p);
  buffers_ = std::move(b);
}

Network::Network(ModelConfig cfg, Parameters params, Parameters buffers)
    : cfg_(std::move(cfg)), params_(std::move(params)), buffers_(std::move(buffers)) {
  cfg_.validate();
  const auto shapes = parameter_shapes(cfg_);
  if (shapes.size() != params_.size()) {
    throw std::invalid_argument("network: expected " + std::to_string(shapes.size()) +
                                " parameters, got " + std::to_string(params_.size()));
  }
  for (const auto& [name, shape] : shapes) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("network: missing parameter " + name);
    if (!(it->second.shape() == shape)) {
      throw std::invalid_argument("network: parameter " + name + " has shape " +
                                  it->second.shape().str() + ", expected " + shape.str());
    }
  }
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [k, v] : params_) n += v.size();
  return n;
}

const Graph& Network::graph(std::size_t batch, Mode mode) const {
  const auto key = std::make_pair(batch, static_cast<int>(mode));
  auto it = cache_.find(key);
  if (it == cache_.end()) it = cache_.emplace(key, build_graph(cfg_, batch, mode)).first;
  return it->second;
}

diff::Bindings Network::state_bindings() const {
  diff::Bindings b = params_;
  for (const auto& [k, v] : buffers_) b[k] = v;
  return b;
}

diff::Bindings Network::image_bindings(const std::vector<const Raster*>& images) const {
  if (cfg_.input != InputKind::Image) throw std::invalid_argument("network expects modality input");
  for (const Raster* r : images) {
    if (r->channels() != cfg_.in_channels || r->height() != cfg_.height ||
        r->width() != cfg_.width) {
      throw diff::ShapeError("image " + std::to_string(r->channels()) + "x" +
                             std::to_string(r->height()) + "x" + std::to_string(r->width()) +
                             " does not match model input " + std::to_string(cfg_.in_channels) +
                             "x" + std::to_string(cfg_.height) + "x" + std::to_string(cfg_.width));
    }
  }
  return {{kImageVar, to_tensor(images)}};
}

diff::Bindings Network::bundle_bindings(const std::vector<const ModalityBundle*>& bundles) const {
  if (cfg_.input != InputKind::Modalities) throw std::invalid_argument("network expects image input");
  std::vector<const Raster*> s, g, c;
  for (const auto* b : bundles) {
    s.push_back(&b->semantic);
    g.push_back(&b->generative);
    c.push_back(&b->attention);
  }
  return {{kSemanticVar, to_tensor(s)}, {kGenerativeVar, to_tensor(g)}, {kConceptVar, to_tensor(c)}};
}

void Network::update_running_stats(const Graph& g, diff::Evaluator& ev) {
  const Real mom = cfg_.bn_momentum;
  for (const auto& site : g.batch_norms) {
    const Tensor& x = ev.value(site.input);
    const auto& s = x.shape();
    const std::size_t B = s[0], C = s[1], HW = s[2] * s[3];
    Tensor& rm = buffers_.at(site.prefix + ".mean");
    Tensor& rv = buffers_.at(site.prefix + ".var");
    for (std::size_t c = 0; c < C; ++c) {
      Real acc = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) acc += x[(b * C + c) * HW + i];
      const Real mu = acc / static_cast<Real>(B * HW);
      Real v = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) {
          const Real d = x[(b * C + c) * HW + i] - mu;
          v += d * d;
        }
      v /= static_cast<Real>(B * HW);
      rm[c] = (1 - mom) * rm[c] + mom * mu;
      rv[c] = (1 - mom) * rv[c] + mom * v;
    }
  }
}

std::vector<MultiMaskOutput> Network::run(const diff::Bindings& inputs, std::size_t batch) const {
  const Graph& g = graph(batch, Mode::Eval);
  diff::Bindings b = state_bindings();
  for (const auto& [k, v] : inputs) b[k] = v;
  diff::Evaluator ev(std::move(b));
  const Tensor& masks = ev.value(g.masks);
  const Tensor& scores = ev.value(g.scores);
  std::vector<MultiMaskOutput> out(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t h = 0; h < cfg_.heads; ++h) {
      out[i].masks.push_back(plane_of(masks, i, h));
      out[i].scores.push_back(scores[i * cfg_.heads + h]);
    }
  }
  return out;
}

namespace {

constexpr std::size_t kPredictChunk = 16;

template <class T, class F>
std::vector<MultiMaskOutput> chunked(const std::vector<const T*>& items, F&& f) {
  std::vector<MultiMaskOutput> out;
  for (std::size_t i = 0; i < items.size(); i += kPredictChunk) {
    const std::size_t e = std::min(items.size(), i + kPredictChunk);
    std::vector<const T*> chunk(items.begin() + static_cast<std::ptrdiff_t>(i),
                                items.begin() + static_cast<std::ptrdiff_t>(e));
    auto part = f(chunk);
    for (auto& o : part) out.push_back(std::move(o));
  }
  return out;
}

}  // namespace

std::vector<MultiMaskOutput> Network::predict(const std::vector<const Raster*>& images) const {
  return chunked(images, [&](const std::vector<const Raster*>& c) {
    return run(image_bindings(c), c.size());
  });
}

std::vector<MultiMaskOutput> Network::predict(
    const std::vector<const ModalityBundle*>& bundles) const {
  return chunked(bundles, [&](const std::vector<const ModalityBundle*>& c) {
    return run(bundle_bindings(c), c.size());
  });
}

MultiMaskOutput Network::predict(const Raster& image) const { return predict(std::vector<const Raster*>{&image}).front(); }

MultiMaskOutput Network::predict(const ModalityBundle& bundle) const {
  return predict(std::vector<const ModalityBundle*>{&bundle}).front();
}

Tensor Network::fuse(const ModalityBundle& bundle) const {
  const Graph& g = graph(1, Mode::Eval);
  diff::Bindings b = state_bindings();
  for (auto& [k, v] : bundle_bindings({&bundle})) b[k] = v;
  diff::Evaluator ev(std::move(b));
  return ev.value(g.fused);
}

}  // namespace ambiseg::net
