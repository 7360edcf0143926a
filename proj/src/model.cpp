#include "attsteer/model.hpp"

#include <cmath>

namespace attsteer {

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.encoder = EncoderConfig::full_scale();
  c.sync();
  return c;
}

ModelConfig ModelConfig::desk_scale() {
  ModelConfig c;
  c.encoder = EncoderConfig::desk_scale();
  c.sync();
  return c;
}

void ModelConfig::sync() {
  decoder.locations = encoder.locations();
  decoder.depth = encoder.depth();
}

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  if (decoder.locations != encoder.locations() || decoder.depth != encoder.depth()) {
    throw std::invalid_argument("decoder L/D do not match the encoder output");
  }
}

Params init_model_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Params p = init_encoder_params(config.encoder, derive_seed(seed, 1));
  p.merge(init_decoder_params(config.decoder, derive_seed(seed, 2)));
  return p;
}

void embed_config(Params& params, const ModelConfig& config) {
  const auto& layers = config.encoder.layers;
  std::vector<float> layout;
  for (const auto& l : layers) {
    layout.push_back(static_cast<float>(l.kernel));
    layout.push_back(static_cast<float>(l.stride));
    layout.push_back(static_cast<float>(l.channels));
  }
  params.insert_or_assign("meta.encoder.layers", Tensor(Shape{layers.size(), 3}, layout));
  params.insert_or_assign(
      "meta.encoder.input",
      Tensor(Shape{3}, {static_cast<float>(config.encoder.input_height),
                        static_cast<float>(config.encoder.input_width),
                        static_cast<float>(config.encoder.input_channels)}));
  const auto& d = config.decoder;
  params.insert_or_assign(
      "meta.decoder",
      Tensor(Shape{6}, {static_cast<float>(d.hidden), static_cast<float>(d.attn_hidden),
                        static_cast<float>(d.out_hidden), d.use_beta ? 1.0f : 0.0f,
                        static_cast<float>(d.keep_prob), static_cast<float>(d.output_scale)}));
}

ModelConfig config_from_params(const Params& params) {
  auto get = [&](const std::string& name) -> const Tensor& {
    auto it = params.find(name);
    if (it == params.end()) throw CheckpointError("checkpoint lacks '" + name + "'");
    return it->second;
  };
  auto count = [](float v) { return static_cast<std::size_t>(std::lround(v)); };
  ModelConfig c;
  const Tensor& layers = get("meta.encoder.layers");
  if (layers.rank() != 2 || layers.dim(1) != 3) throw CheckpointError("malformed meta.encoder.layers");
  c.encoder.layers.clear();
  for (std::size_t i = 0; i < layers.dim(0); ++i) {
    c.encoder.layers.push_back(
        {count(layers.at({i, 0})), count(layers.at({i, 1})), count(layers.at({i, 2}))});
  }
  const Tensor& input = get("meta.encoder.input");
  const Tensor& dec = get("meta.decoder");
  if (input.size() != 3 || dec.size() != 6) throw CheckpointError("malformed model meta tensors");
  c.encoder.input_height = count(input[0]);
  c.encoder.input_width = count(input[1]);
  c.encoder.input_channels = count(input[2]);
  c.decoder.hidden = count(dec[0]);
  c.decoder.attn_hidden = count(dec[1]);
  c.decoder.out_hidden = count(dec[2]);
  c.decoder.use_beta = dec[3] != 0.0f;
  c.decoder.keep_prob = dec[4];
  c.decoder.output_scale = dec[5];
  c.sync();
  c.validate();
  return c;
}

Params strip_meta(const Params& params) {
  Params out;
  for (const auto& [name, t] : params) {
    if (!name.starts_with("meta.")) out.emplace(name, t);
  }
  return out;
}

AttentionSteeringModel::AttentionSteeringModel(ModelConfig config, Params params)
    : config_(std::move(config)), params_(strip_meta(params)) {
  config_.validate();
}

AttentionSteeringModel AttentionSteeringModel::load(const std::filesystem::path& path) {
  Params p = load_checkpoint(path);
  ModelConfig c = config_from_params(p);
  return AttentionSteeringModel(std::move(c), std::move(p));
}

std::vector<double> AttentionSteeringModel::predict(std::span<const ProcessedFrame> window) const {
  return attend(window).u_hat;
}

AttentionPrediction AttentionSteeringModel::attend(std::span<const ProcessedFrame> window) const {
  if (window.empty()) throw std::invalid_argument("attend needs at least one frame");
  std::vector<const Tensor*> frames;
  for (const auto& f : window) frames.push_back(&f.pixels);
  const Tensor cubes = encode_batch(frames, params_, config_.encoder);
  const std::size_t L = config_.encoder.locations(), D = config_.encoder.depth();
  std::vector<Tensor> flat;
  for (std::size_t t = 0; t < window.size(); ++t) {
    std::vector<float> v(cubes.data() + t * L * D, cubes.data() + (t + 1) * L * D);
    flat.emplace_back(Shape{L, D}, std::move(v));
  }
  auto r = run_rollout(flat, params_, config_.decoder);
  return AttentionPrediction{std::move(r.u_hat), std::move(r.alpha)};
}

}  // namespace attsteer
