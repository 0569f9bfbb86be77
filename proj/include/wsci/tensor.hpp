#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace wsci {

// Structured failure with a short machine-parsable code.
class error : public std::runtime_error {
 public:
  error(std::string code, const std::string& msg)
      : std::runtime_error(code + ": " + msg), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

// Dense rank-4 array (batch, channel, height, width), row-major contiguous.
template <class T>
struct TensorT {
  std::array<int, 4> shape{0, 0, 0, 0};
  std::vector<T> data;

  TensorT() = default;
  TensorT(int b, int c, int h, int w)
      : shape{b, c, h, w}, data(static_cast<size_t>(b) * c * h * w, T(0)) {
    if (b < 0 || c < 0 || h < 0 || w < 0)
      throw error("shape", "negative extent");
  }

  static TensorT zeros(int b, int c, int h, int w) { return TensorT(b, c, h, w); }

  int batch() const { return shape[0]; }
  int channels() const { return shape[1]; }
  int height() const { return shape[2]; }
  int width() const { return shape[3]; }
  size_t size() const { return data.size(); }

  T& at(int b, int c, int h, int w) {
    return data[((static_cast<size_t>(b) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  const T& at(int b, int c, int h, int w) const {
    return data[((static_cast<size_t>(b) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <class U>
  TensorT<U> cast() const {
    TensorT<U> out(shape[0], shape[1], shape[2], shape[3]);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;

// Trainable value with an accumulated gradient of identical shape.
template <class T>
struct ParameterT {
  TensorT<T> value;
  TensorT<T> grad;
  bool trainable = true;

  ParameterT() = default;
  explicit ParameterT(TensorT<T> v, bool train = true)
      : value(std::move(v)),
        grad(value.shape[0], value.shape[1], value.shape[2], value.shape[3]),
        trainable(train) {}

  void zero_grad() { grad.fill(T(0)); }

  template <class U>
  ParameterT<U> cast() const {
    ParameterT<U> out(value.template cast<U>(), trainable);
    return out;
  }
};

using Parameter = ParameterT<float>;

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-based random stream: output is a pure function of
// (seed, stream id, draw index), identical on every platform.
struct RngStream {
  uint64_t seed = 0;
  uint64_t stream = 0;
  uint64_t counter = 0;

  RngStream() = default;
  RngStream(uint64_t s, uint64_t id) : seed(s), stream(id) {}

  uint64_t at(uint64_t index) const {
    return splitmix64(splitmix64(seed ^ splitmix64(stream)) + index);
  }

  uint64_t next_u64() { return at(counter++); }

  // Uniform in [0, 1).
  double next_uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller. Consumes two draws.
  double next_normal() {
    double u1 = next_uniform();
    double u2 = next_uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Independent child stream, e.g. one per tile or per dropout layer.
  RngStream fork(uint64_t id) const { return RngStream(at(id), id); }
};

}  // namespace wsci
