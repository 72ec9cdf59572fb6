#pragma once

// Computation graph of the perception network, generic over the scalar type
// so the same code trains in float and is gradient-checked in double.

#include <map>
#include <string>

#include "falcon/autodiff.hpp"
#include "falcon/perception.hpp"

namespace falcon {

template <class T>
using ParamMap = std::map<std::string, ad::BasicTensor<T>>;

template <class T>
ParamMap<T> make_params(const PerceptionModel& model, bool requires_grad) {
  ParamMap<T> out;
  for (const auto& p : model.params) {
    std::vector<T> data(p.data.begin(), p.data.end());
    out[p.name] = requires_grad ? ad::BasicTensor<T>::parameter(p.shape, std::move(data))
                                : ad::BasicTensor<T>::constant(p.shape, std::move(data));
  }
  return out;
}

template <class T>
struct NetOutputs {
  ad::BasicTensor<T> mask;    // [N, 1, H, W] probabilities
  ad::BasicTensor<T> gate;    // [N, C3, H/8, W/8]
  ad::BasicTensor<T> pooled;  // [N, C3] gated, pooled features
  ad::BasicTensor<T> raw;     // [N, 7] head output: q(4), t(3)
};

/// input: [N, 3, H, W] with H, W divisible by 8.
template <class T>
NetOutputs<T> build_network(const ParamMap<T>& p, const ad::BasicTensor<T>& input,
                            const ForwardOptions& opt = {}) {
  using namespace ad;
  auto conv = [&](const BasicTensor<T>& x, const std::string& name, int stride, int pad) {
    return conv2d(x, p.at(name + ".w"), p.at(name + ".b"), stride, pad);
  };
  // Encoder: three stride-2 3x3 blocks.
  const auto e1 = relu(conv(input, "enc1", 2, 1));
  const auto e2 = relu(conv(e1, "enc2", 2, 1));
  const auto e3 = relu(conv(e2, "enc3", 2, 1));

  // Mask decoder with skip connections back to full resolution.
  const auto d0 = relu(conv(e3, "dec0", 1, 1));
  const auto d1 = relu(conv(concat(nearest_upsample2x(d0), e2), "dec1", 1, 1));
  const auto d2 = relu(conv(concat(nearest_upsample2x(d1), e1), "dec2", 1, 1));
  const auto mask = sigmoid(conv(concat(nearest_upsample2x(d2), input), "dec3", 1, 1));

  // Gated attention: per-channel gates from mask-decoder features.
  BasicTensor<T> gate;
  if (opt.gate_override) {
    gate = BasicTensor<T>::constant(e3.shape(), std::vector<T>(e3.numel(), static_cast<T>(*opt.gate_override)));
  } else {
    gate = sigmoid(conv(d0, "gate", 1, 0));
  }
  const auto pooled = global_avg_pool(mul(e3, gate));
  const auto hidden = relu(add(matmul(pooled, p.at("fc1.w")), p.at("fc1.b")));
  const auto raw = add(matmul(hidden, p.at("fc2.w")), p.at("fc2.b"));
  return {mask, gate, pooled, raw};
}

/// Packs images (at the model resolution, 3 channels) into [N, 3, H, W], centred on 0.
template <class T>
ad::BasicTensor<T> pack_images(const std::vector<const Image*>& images) {
  const int h = images.front()->height, w = images.front()->width;
  std::vector<T> data;
  data.reserve(images.size() * 3 * h * w);
  for (const Image* img : images)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) data.push_back(static_cast<T>(img->at(x, y, c)) - static_cast<T>(0.5));
  return ad::BasicTensor<T>::constant({static_cast<int>(images.size()), 3, h, w}, std::move(data));
}

template <class T>
ad::BasicTensor<T> pack_masks(const std::vector<const Image*>& masks) {
  const int h = masks.front()->height, w = masks.front()->width;
  std::vector<T> data;
  data.reserve(masks.size() * h * w);
  for (const Image* m : masks)
    for (float v : m->data) data.push_back(static_cast<T>(v));
  return ad::BasicTensor<T>::constant({static_cast<int>(masks.size()), 1, h, w}, std::move(data));
}

}  // namespace falcon
