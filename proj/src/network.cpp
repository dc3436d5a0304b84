#include "prnet/network.hpp"

#include <sstream>

#include "parse_value.hpp"

namespace prnet {

const char* decoder_name(DecoderVariant v) {
  switch (v) {
    case DecoderVariant::Fpn:
      return "fpn";
    case DecoderVariant::Ggs:
      return "ggs";
    case DecoderVariant::GgsSsd:
      return "ggs_ssd";
  }
  return "?";
}

DecoderVariant parse_decoder(const std::string& s) {
  if (s == "fpn") return DecoderVariant::Fpn;
  if (s == "ggs") return DecoderVariant::Ggs;
  if (s == "ggs_ssd") return DecoderVariant::GgsSsd;
  throw std::invalid_argument("unknown decoder '" + s +
                              "' (expected fpn, ggs or ggs_ssd)");
}

namespace {

std::string join_widths(const std::vector<std::size_t>& w) {
  std::ostringstream os;
  for (std::size_t i = 0; i < w.size(); ++i) os << (i ? "," : "") << w[i];
  return os.str();
}

std::vector<std::size_t> parse_widths(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(detail::parse_count("backbone_widths", tok));
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config key '" + key + "': '" + v +
                              "' is not a boolean");
}

constexpr const char* kModelKeys[] = {
    "backbone_widths", "unified_channels", "decoder",     "strategy",
    "pooled_extent",   "reduction",        "ieo",         "cfe",
    "regulation",      "detach_perception", "input_size", "model_seed"};

}  // namespace

void ModelConfig::validate() const {
  if (backbone_widths.size() != 5)
    throw std::invalid_argument("backbone_widths needs five stage widths");
  for (auto w : backbone_widths)
    if (w == 0) throw std::invalid_argument("backbone widths must be positive");
  if (unified_channels == 0)
    throw std::invalid_argument("unified_channels must be positive");
  if (input_size == 0 || input_size % 32 != 0)
    throw std::invalid_argument("input_size " + std::to_string(input_size) +
                                " must be a positive multiple of 32 (five halvings)");
  if (decoder == DecoderVariant::GgsSsd && input_size / 128 < 1)
    throw std::invalid_argument(
        "input_size " + std::to_string(input_size) +
        " underflows the SSD extension (stage 8 would be smaller than 1x1); "
        "use an input of at least 128");
  if (ieo_enabled && (input_size / 32) % 4 != 0)
    throw std::invalid_argument(
        "input_size " + std::to_string(input_size) +
        " gives IEO levels whose extents are not divisible by 4; use a "
        "multiple of 128");
  if (regulation_enabled && strategy != PerceptionStrategy::FullyConnected &&
      unified_channels / std::max<std::size_t>(reduction, 1) < 1)
    throw std::invalid_argument("unified_channels / reduction must be >= 1");
}

std::vector<std::pair<std::string, std::string>> ModelConfig::to_pairs() const {
  return {{"backbone_widths", join_widths(backbone_widths)},
          {"unified_channels", std::to_string(unified_channels)},
          {"decoder", decoder_name(decoder)},
          {"strategy", strategy_name(strategy)},
          {"pooled_extent", std::to_string(pooled_extent)},
          {"reduction", std::to_string(reduction)},
          {"ieo", ieo_enabled ? "true" : "false"},
          {"cfe", cfe_enabled ? "true" : "false"},
          {"regulation", regulation_enabled ? "true" : "false"},
          {"detach_perception", detach_perception ? "true" : "false"},
          {"input_size", std::to_string(input_size)},
          {"model_seed", std::to_string(seed)}};
}

bool ModelConfig::is_key(const std::string& key) {
  for (const char* k : kModelKeys)
    if (key == k) return true;
  return false;
}

ModelConfig ModelConfig::from_pairs(
    const std::vector<std::pair<std::string, std::string>>& pairs) {
  ModelConfig c;
  for (const auto& [k, v] : pairs) {
    if (k == "backbone_widths")
      c.backbone_widths = parse_widths(v);
    else if (k == "unified_channels")
      c.unified_channels = detail::parse_count(k, v);
    else if (k == "decoder")
      c.decoder = parse_decoder(v);
    else if (k == "strategy")
      c.strategy = parse_strategy(v);
    else if (k == "pooled_extent")
      c.pooled_extent = detail::parse_count(k, v);
    else if (k == "reduction")
      c.reduction = detail::parse_count(k, v);
    else if (k == "ieo")
      c.ieo_enabled = parse_bool(k, v);
    else if (k == "cfe")
      c.cfe_enabled = parse_bool(k, v);
    else if (k == "regulation")
      c.regulation_enabled = parse_bool(k, v);
    else if (k == "detach_perception")
      c.detach_perception = parse_bool(k, v);
    else if (k == "input_size")
      c.input_size = detail::parse_count(k, v);
    else if (k == "model_seed")
      c.seed = detail::parse_seed(k, v);
  }
  return c;
}

ModelConfig ModelConfig::full_preset() {
  ModelConfig c;
  c.backbone_widths = {64, 128, 256, 512, 512};
  c.unified_channels = 64;
  c.decoder = DecoderVariant::GgsSsd;
  c.ieo_enabled = true;
  c.input_size = 384;
  return c;
}

ModelConfig ModelConfig::toy_prnet() {
  ModelConfig c;
  c.backbone_widths = {8, 16, 32, 32, 32};
  c.unified_channels = 16;
  c.decoder = DecoderVariant::GgsSsd;
  c.ieo_enabled = true;
  c.input_size = 128;
  return c;
}

std::vector<std::string> config_diff(const ModelConfig& a,
                                     const ModelConfig& b) {
  std::vector<std::string> out;
  auto pa = a.to_pairs();
  auto pb = b.to_pairs();
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (pa[i].second != pb[i].second)
      out.push_back(pa[i].first + ": " + pa[i].second + " -> " + pb[i].second);
  return out;
}

template <typename T>
void Diagnostics<T>::append(const std::string& prefix,
                            const RegulationWeights<T>& w) {
  const std::size_t N = w.values.shape()[0];
  if (per_sample.empty()) per_sample.resize(N);
  for (std::size_t k = 0; k < w.order.size(); ++k) {
    names.push_back(prefix + w.order[k]);
    for (std::size_t n = 0; n < N; ++n)
      per_sample[n].push_back(
          static_cast<double>(w.values.data()[n * w.order.size() + k]));
  }
}

template <typename T>
Cfe<T>::Cfe(ParameterStore<T>& store, const std::string& name,
            std::size_t channels, const PerceptionConfig& perception,
            std::size_t perception_channels, std::size_t perception_h,
            std::size_t perception_w)
    : reduce(store, name + ".reduce", 4 * channels, channels, 1) {
  for (std::size_t k = 0; k < 4; ++k)
    branch_convs[k] = Conv2d<T>(store, name + ".r" + std::to_string(kDilations[k]),
                                channels, channels, 3,
                                {1, kDilations[k], kDilations[k]});
  if (perception.regulated_count != 0) {
    PerceptionConfig cfg = perception;
    cfg.regulated_count = 4;
    memory_units.emplace(store, name + ".pr", cfg, perception_channels,
                         perception_h, perception_w);
  }
}

template <typename T>
std::array<Tensor<T>, 4> Cfe<T>::branches(const Tensor<T>& feature) const {
  std::array<Tensor<T>, 4> out;
  for (std::size_t k = 0; k < 4; ++k) out[k] = relu(branch_convs[k](feature));
  return out;
}

template <typename T>
Tensor<T> Cfe<T>::apply(const Tensor<T>& feature,
                        const Tensor<T>& weights) const {
  auto b = branches(feature);
  std::vector<Tensor<T>> parts;
  for (std::size_t k = 0; k < 4; ++k)
    parts.push_back(weights.defined()
                        ? scale_per_sample(b[k], select_column(weights, k))
                        : b[k]);
  return reduce(concat_channels(parts));
}

template <typename T>
Model<T>::Model(ModelConfig config)
    : config_(std::move(config)),
      store_(std::make_unique<ParameterStore<T>>(config_.seed)) {
  config_.validate();
  auto& s = *store_;
  const auto& w = config_.backbone_widths;
  const std::size_t cu = config_.unified_channels;
  const Conv2dOptions same{1, 1, 1};

  std::size_t in = 3;
  for (std::size_t k = 0; k < 5; ++k) {
    const std::string name = "backbone.stage" + std::to_string(k + 1);
    stages.push_back({ConvBnRelu<T>(s, name + ".a", in, w[k], 3, same),
                      ConvBnRelu<T>(s, name + ".b", w[k], w[k], 3, same)});
    in = w[k];
  }
  for (std::size_t k = 0; k < 5; ++k)
    unify[k] = ConvBnRelu<T>(s, "unify.i" + std::to_string(k + 1), w[k], cu, 1);

  if (config_.decoder == DecoderVariant::GgsSsd) {
    for (std::size_t k = 0; k < 3; ++k)
      ssd_stages[k] = ConvBnRelu<T>(s, "ssd.stage" + std::to_string(k + 6),
                                    w[4], w[4], 3, same);
    ssd_combine = Conv2d<T>(s, "ssd.combine", w[3] + 2 * w[4], cu, 1);
  }

  const std::size_t pe = perception_extent();
  PerceptionConfig pc;
  pc.strategy = config_.strategy;
  pc.pooled_h = pc.pooled_w = config_.pooled_extent;
  pc.reduction = config_.reduction;
  pc.detach_input = config_.detach_perception;
  pc.regulated_count = config_.regulation_enabled ? 1 : 0;

  if (config_.cfe_enabled)
    for (std::size_t level = 3; level <= 5; ++level)
      cfes.emplace(level, Cfe<T>(s, "cfe" + std::to_string(level), cu, pc, cu,
                                 pe, pe));

  if (config_.ieo_enabled)
    for (std::size_t level = 3; level <= 5; ++level) {
      PerceptionConfig ic = pc;
      ic.regulated_count = 3;
      ieos.emplace(level, Ieo<T>(s, "ieo" + std::to_string(level), cu, ic, cu,
                                 pe, pe));
    }

  if (config_.regulation_enabled) {
    PerceptionConfig dc = pc;
    dc.regulated_count = decoder_registry().size();
    decoder_perceiver.emplace(s, "decoder.pr", dc, cu, pe, pe);
  }

  for (std::size_t k = 0; k < 4; ++k)
    merges[k] = ConvBnRelu<T>(s, "decoder.merge_d" + std::to_string(k + 1), cu,
                              cu, 3, same);
  if (config_.decoder != DecoderVariant::Fpn)
    guidance_conv = Conv2d<T>(s, "decoder.guidance", cu, cu, 3, same);
  head = Conv2d<T>(s, "head", cu, 1, 3, same);
}

template <typename T>
std::vector<std::string> Model<T>::decoder_registry() const {
  std::vector<std::string> names{"i1", "i2", "i3", "i4",
                                 "d2", "d3", "d4", "d5"};
  if (config_.decoder != DecoderVariant::Fpn)
    for (const char* g : {"g1", "g2", "g3"}) names.push_back(g);
  return names;
}

template <typename T>
std::size_t Model<T>::perception_extent() const {
  return config_.decoder == DecoderVariant::GgsSsd ? config_.input_size / 64
                                                   : config_.input_size / 32;
}

template <typename T>
std::array<Tensor<T>, 5> Model<T>::backbone_forward(const Tensor<T>& image,
                                                    NormMode mode) const {
  const Shape& s = image.shape();
  if (s.rank() != 4 || s.c() != 3)
    throw ShapeError("backbone expects N x 3 x H x W, got " + s.str());
  if (s.h() % 32 != 0 || s.w() % 32 != 0 || s.h() == 0 || s.w() == 0)
    throw ShapeError("backbone input " + s.str() +
                     " must have extents divisible by 32");
  std::array<Tensor<T>, 5> out;
  Tensor<T> x = image;
  for (std::size_t k = 0; k < 5; ++k) {
    x = stages[k][1](stages[k][0](x, mode), mode);
    x = max_pool2d(x, 2, 2);
    out[k] = x;
  }
  return out;
}

template <typename T>
std::array<Tensor<T>, 5> Model<T>::unify_channels(
    const std::array<Tensor<T>, 5>& raw, NormMode mode) const {
  std::array<Tensor<T>, 5> out;
  for (std::size_t k = 0; k < 5; ++k) out[k] = unify[k](raw[k], mode);
  return out;
}

template <typename T>
Tensor<T> Model<T>::ssd_extend_and_combine(const std::array<Tensor<T>, 5>& raw,
                                           NormMode mode) const {
  if (config_.decoder != DecoderVariant::GgsSsd)
    throw std::logic_error("SSD extension requires the ggs_ssd decoder");
  const std::size_t e5 = raw[4].shape().h();
  if (e5 / 4 < 1)
    throw ShapeError("SSD extension underflow: stage 5 extent " +
                     std::to_string(e5) +
                     " leaves stage 8 smaller than 1x1; enlarge the input to "
                     "at least 128");
  auto s6 = ssd_stages[0](raw[4], mode);
  auto s7 = max_pool2d(ssd_stages[1](s6, mode), 2, 2);
  auto s8 = max_pool2d(ssd_stages[2](s7, mode), 2, 2);
  const std::size_t h = s7.shape().h(), w = s7.shape().w();
  auto cat = concat_channels<T>({resize_bilinear(raw[3], h, w), s7,
                                 resize_bilinear(s8, h, w)});
  return relu(ssd_combine(cat));
}

template <typename T>
Tensor<T> Model<T>::decode(FeaturePyramid<T>& p,
                           const RegulationWeights<T>& weights, bool guided,
                           NormMode mode) const {
  const bool regulated = weights.size() > 0;
  auto weigh = [&](const Tensor<T>& f, const std::string& name) {
    return regulated ? scale_per_sample(f, weights.column(name)) : f;
  };
  if (guided) {
    for (std::size_t k = 0; k < 3; ++k) {
      const Shape& target = p.i[k + 1].shape();
      p.g[k] = relu(guidance_conv(resize_bilinear(p.i[4], target.h(), target.w())));
    }
  }
  p.d[4] = p.i[4];
  for (std::size_t j = 4; j >= 1; --j) {
    // d_j (0-based index j-1) from i_j and d_{j+1}.
    const Tensor<T>& lateral = p.i[j - 1];
    const std::size_t h = lateral.shape().h(), w = lateral.shape().w();
    std::vector<Tensor<T>> terms{
        weigh(lateral, "i" + std::to_string(j)),
        resize_bilinear(weigh(p.d[j], "d" + std::to_string(j + 1)), h, w)};
    // The shallowest merge (d1) is never guided.
    if (guided && j >= 2)
      terms.push_back(weigh(p.g[j - 2], "g" + std::to_string(j - 1)));
    p.d[j - 1] = merges[j - 1](add_n(terms), mode);
  }
  const Tensor<T>& d1 = p.d[0];
  auto logits = head(d1);
  return resize_bilinear(sigmoid(logits), 2 * d1.shape().h(),
                         2 * d1.shape().w());
}

template <typename T>
Tensor<T> Model<T>::fpn_pr_decode(FeaturePyramid<T>& pyramid,
                                  const RegulationWeights<T>& weights,
                                  NormMode mode) const {
  return decode(pyramid, weights, false, mode);
}

template <typename T>
Tensor<T> Model<T>::ggs_pr_decode(FeaturePyramid<T>& pyramid,
                                  const RegulationWeights<T>& weights,
                                  NormMode mode) const {
  if (config_.decoder == DecoderVariant::Fpn)
    throw std::logic_error("GGS decode requires a ggs or ggs_ssd model");
  return decode(pyramid, weights, true, mode);
}

template <typename T>
ForwardResult<T> Model<T>::forward(const Tensor<T>& image,
                                   NormMode mode) const {
  const Shape& s = image.shape();
  if (s.rank() != 4 || s.h() != config_.input_size ||
      s.w() != config_.input_size)
    throw ShapeError("model configured for " +
                     std::to_string(config_.input_size) + "x" +
                     std::to_string(config_.input_size) + " input, got " +
                     s.str());
  ForwardResult<T> r;
  auto raw = backbone_forward(image, mode);
  r.pyramid.i = unify_channels(raw, mode);
  const std::size_t N = s.n();

  Tensor<T> perception = config_.decoder == DecoderVariant::GgsSsd
                             ? ssd_extend_and_combine(raw, mode)
                             : r.pyramid.i[4];

  for (const auto& [level, cfe] : cfes) {
    Tensor<T> w;
    if (cfe.memory_units) {
      w = (*cfe.memory_units)(perception);
      r.diagnostics.append(
          "cfe" + std::to_string(level) + ".",
          RegulationWeights<T>({"r1", "r3", "r5", "r7"}, w));
    }
    r.pyramid.i[level - 1] = cfe.apply(r.pyramid.i[level - 1], w);
  }

  for (const auto& [level, ieo] : ieos) {
    auto out = ieo.forward(r.pyramid.i[level - 1], perception);
    r.pyramid.i[level - 1] = out.output;
    r.diagnostics.append(
        "ieo" + std::to_string(level) + ".",
        RegulationWeights<T>({"peripheral", "foveal", "original"}, out.coupled));
  }

  RegulationWeights<T> weights;
  if (decoder_perceiver) {
    weights = RegulationWeights<T>(decoder_registry(),
                                   (*decoder_perceiver)(perception));
    r.diagnostics.append("decoder.", weights);
  } else {
    // Bypass: every decoder weight is 1 and the decode applies no scaling.
    r.diagnostics.append(
        "decoder.", RegulationWeights<T>::constant(decoder_registry(), N, T(1)));
  }

  r.prediction = config_.decoder == DecoderVariant::Fpn
                     ? fpn_pr_decode(r.pyramid, weights, mode)
                     : ggs_pr_decode(r.pyramid, weights, mode);
  return r;
}

template struct Diagnostics<float>;
template struct Diagnostics<double>;
template class Cfe<float>;
template class Cfe<double>;
template class Model<float>;
template class Model<double>;

}  // namespace prnet
