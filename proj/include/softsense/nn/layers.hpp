#pragma once

#include <cmath>
#include <string>

#include "softsense/nn/ops.hpp"
#include "softsense/nn/random.hpp"

namespace softsense::nn {

enum class LayerKind { FullyConnected, Conv2d, ConvTranspose2d, Relu, Concat, Split };

inline constexpr int kConvKernel = 4;
inline constexpr int kConvStride = 2;

/// Spatial output size of an unpadded convolution.
constexpr int conv_out(int in, int kernel = kConvKernel, int stride = kConvStride) {
  return (in - kernel) / stride + 1;
}
constexpr int conv_transpose_out(int in, int kernel = kConvKernel, int stride = kConvStride) {
  return (in - 1) * stride + kernel;
}

namespace detail {

template <class T>
Tensor<T> glorot(Shape shape, int fan_in, int fan_out, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-limit, limit));
  return t;
}

}  // namespace detail

template <class T>
struct Dense {
  Parameter<T>* weight = nullptr;  // [out, in]
  Parameter<T>* bias = nullptr;    // [out]
  int in = 0, out = 0;

  static Dense make(ParameterSet<T>& params, const std::string& name, int in, int out, Rng& rng) {
    Dense d;
    d.in = in;
    d.out = out;
    d.weight = &params.add(name + ".weight", detail::glorot<T>({out, in}, in, out, rng));
    d.bias = &params.add(name + ".bias", Tensor<T>({out}));
    return d;
  }

  typename Tape<T>::Var operator()(Tape<T>& tape, typename Tape<T>::Var x) const {
    return linear(tape, x, tape.parameter(*weight), tape.parameter(*bias));
  }
};

template <class T>
struct Conv {
  Parameter<T>* weight = nullptr;  // [out_ch, in_ch, k, k]
  Parameter<T>* bias = nullptr;    // [out_ch]
  int in_ch = 0, out_ch = 0;

  static Conv make(ParameterSet<T>& params, const std::string& name, int in_ch, int out_ch, Rng& rng) {
    Conv c;
    c.in_ch = in_ch;
    c.out_ch = out_ch;
    const int kk = kConvKernel * kConvKernel;
    c.weight = &params.add(name + ".weight", detail::glorot<T>({out_ch, in_ch, kConvKernel, kConvKernel},
                                                               in_ch * kk, out_ch * kk, rng));
    c.bias = &params.add(name + ".bias", Tensor<T>({out_ch}));
    return c;
  }

  typename Tape<T>::Var operator()(Tape<T>& tape, typename Tape<T>::Var x) const {
    return conv2d(tape, x, tape.parameter(*weight), tape.parameter(*bias), kConvStride);
  }
};

template <class T>
struct ConvTranspose {
  Parameter<T>* weight = nullptr;  // [in_ch, out_ch, k, k]
  Parameter<T>* bias = nullptr;    // [out_ch]
  int in_ch = 0, out_ch = 0;

  static ConvTranspose make(ParameterSet<T>& params, const std::string& name, int in_ch, int out_ch, Rng& rng) {
    ConvTranspose c;
    c.in_ch = in_ch;
    c.out_ch = out_ch;
    const int kk = kConvKernel * kConvKernel;
    c.weight = &params.add(name + ".weight", detail::glorot<T>({in_ch, out_ch, kConvKernel, kConvKernel},
                                                               in_ch * kk, out_ch * kk, rng));
    c.bias = &params.add(name + ".bias", Tensor<T>({out_ch}));
    return c;
  }

  typename Tape<T>::Var operator()(Tape<T>& tape, typename Tape<T>::Var x) const {
    return conv_transpose2d(tape, x, tape.parameter(*weight), tape.parameter(*bias), kConvStride);
  }
};

}  // namespace softsense::nn
