#include "attsteer/encoder.hpp"

#include "attsteer/init.hpp"
#include "attsteer/rng.hpp"

namespace attsteer {

EncoderConfig EncoderConfig::full_scale() {
  EncoderConfig c;
  c.layers = {{5, 2, 24}, {5, 2, 36}, {5, 2, 48}, {3, 1, 64}, {3, 1, 64}};
  c.input_height = 80;
  c.input_width = 160;
  return c;
}

EncoderConfig EncoderConfig::desk_scale() {
  EncoderConfig c;
  c.layers = {{5, 2, 12}, {5, 2, 16}, {3, 2, 16}, {3, 1, 16}, {3, 1, 16}};
  c.input_height = 40;
  c.input_width = 80;
  return c;
}

std::size_t EncoderConfig::cumulative_stride() const {
  std::size_t s = 1;
  for (const auto& l : layers) s *= l.stride;
  return s;
}

std::size_t EncoderConfig::grid_height() const {
  std::size_t h = input_height;
  for (const auto& l : layers) h = (h + l.stride - 1) / l.stride;
  return h;
}

std::size_t EncoderConfig::grid_width() const {
  std::size_t w = input_width;
  for (const auto& l : layers) w = (w + l.stride - 1) / l.stride;
  return w;
}

std::size_t EncoderConfig::depth() const {
  return layers.empty() ? input_channels : layers.back().channels;
}

void EncoderConfig::validate() const {
  if (layers.empty()) throw std::invalid_argument("encoder needs at least one layer");
  for (const auto& l : layers) {
    if (l.kernel == 0 || l.stride == 0 || l.channels == 0) {
      throw std::invalid_argument("encoder layer extents must be positive");
    }
  }
  if (cumulative_stride() != 8) {
    throw std::invalid_argument("encoder cumulative stride must be 8, got " +
                                std::to_string(cumulative_stride()));
  }
  if (input_height % 8 != 0 || input_width % 8 != 0) {
    throw std::invalid_argument("encoder input extents must be multiples of 8");
  }
}

std::string encoder_kernel_name(std::size_t layer) {
  return "encoder.conv" + std::to_string(layer) + ".kernel";
}

std::string encoder_bias_name(std::size_t layer) {
  return "encoder.conv" + std::to_string(layer) + ".bias";
}

Params init_encoder_params(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Params p;
  std::size_t in = config.input_channels;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const auto& l = config.layers[i];
    p.emplace(encoder_kernel_name(i),
              xavier_init(Shape{l.kernel, l.kernel, in, l.channels}, derive_seed(seed, 100, i)));
    p.emplace(encoder_bias_name(i), Tensor(Shape{l.channels}));
    in = l.channels;
  }
  return p;
}

template <typename T>
Var<T> encode(Var<T> frames, const ParamVars<T>& params, const EncoderConfig& config) {
  const auto& s = frames.shape();
  if (s.size() != 4 || s[1] != config.input_height || s[2] != config.input_width ||
      s[3] != config.input_channels) {
    throw ShapeError("encoder expects [N, " + std::to_string(config.input_height) + ", " +
                     std::to_string(config.input_width) + ", " +
                     std::to_string(config.input_channels) + "] input, got " + to_string(s));
  }
  Var<T> x = frames;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    x = relu(conv2d(x, param(params, encoder_kernel_name(i)), config.layers[i].stride) +
             param(params, encoder_bias_name(i)));
  }
  return x;
}

Tensor encode_batch(const std::vector<const Tensor*>& frames, const Params& params,
                    const EncoderConfig& config) {
  if (frames.empty()) throw std::invalid_argument("encode_batch needs frames");
  const Shape frame_shape{config.input_height, config.input_width, config.input_channels};
  Tensor batch(Shape{frames.size(), config.input_height, config.input_width,
                     config.input_channels});
  const std::size_t per = element_count(frame_shape);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i]->shape() != frame_shape) {
      throw ShapeError("frame shape " + to_string(frames[i]->shape()) + " does not match " +
                       to_string(frame_shape));
    }
    std::copy(frames[i]->data(), frames[i]->data() + per, batch.data() + i * per);
  }
  Tape<float> tape;
  auto vars = bind_params(tape, params, false);
  return encode(tape.constant(std::move(batch)), vars, config).value();
}

FeatureCube encode(const ProcessedFrame& frame, const Params& params, const EncoderConfig& config) {
  Tensor out = encode_batch({&frame.pixels}, params, config);
  const Shape& s = out.shape();
  return FeatureCube{out.reshaped(Shape{s[1], s[2], s[3]})};
}

Tensor flatten_cube(const FeatureCube& cube) {
  return cube.values.reshaped(Shape{cube.locations(), cube.depth()});
}

FeatureCube unflatten_cube(const Tensor& flat, std::size_t grid_height, std::size_t grid_width) {
  if (flat.rank() != 2 || flat.dim(0) != grid_height * grid_width) {
    throw ShapeError("cannot unflatten " + to_string(flat.shape()) + " onto a " +
                     std::to_string(grid_height) + "x" + std::to_string(grid_width) + " grid");
  }
  return FeatureCube{flat.reshaped(Shape{grid_height, grid_width, flat.dim(1)})};
}

template Var<float> encode<float>(Var<float>, const ParamVars<float>&, const EncoderConfig&);
template Var<double> encode<double>(Var<double>, const ParamVars<double>&, const EncoderConfig&);

}  // namespace attsteer
