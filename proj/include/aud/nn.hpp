// aud/nn.hpp
//
// Minimal layers with hand-written backward passes over frames x channels
// matrices. Forward passes are const so a frozen model can be shared between
// threads; backward passes take the cached input/output explicitly and
// accumulate into the parameter gradients.

#ifndef AUD_NN_HPP_
#define AUD_NN_HPP_

#include "aud/common.hpp"

#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace aud::nn {

struct Parameter {
  std::string name;
  MatrixXd value;
  MatrixXd grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using ParameterList = std::vector<Parameter*>;

class Layer {
 public:
  virtual ~Layer() = default;
  virtual MatrixXd forward(const MatrixXd& x) const = 0;
  // Returns dL/dx given the input x, the output y = forward(x) and dL/dy.
  virtual MatrixXd backward(const MatrixXd& x, const MatrixXd& y, const MatrixXd& dy) = 0;
  virtual void collect(ParameterList& out) { (void)out; }
  virtual std::unique_ptr<Layer> clone() const = 0;
};

enum class Padding { kSame, kValid };

// 1-D convolution over time. Weight layout is (kernel * in) x out so a frame
// window flattened time-major multiplies straight into the output channels.
// With kSame padding the output has ceil(T / stride) frames.
class Conv1d final : public Layer {
 public:
  Conv1d(std::string name, int in_channels, int out_channels, int kernel, int stride,
         Padding padding, std::mt19937_64& rng);

  MatrixXd forward(const MatrixXd& x) const override;
  MatrixXd backward(const MatrixXd& x, const MatrixXd& y, const MatrixXd& dy) override;
  void collect(ParameterList& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv1d>(*this); }

  Eigen::Index output_frames(Eigen::Index input_frames) const;
  int kernel() const { return kernel_; }

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  MatrixXd im2col(const MatrixXd& x) const;
  Eigen::Index first_tap(Eigen::Index out_frame) const;

  int in_;
  int out_;
  int kernel_;
  int stride_;
  Padding padding_;
  Parameter weight_;
  Parameter bias_;
};

// Transposed convolution with kernel == stride: every input frame expands to
// `stride` output frames through its own weight slice.
class UpsampleConv1d final : public Layer {
 public:
  UpsampleConv1d(std::string name, int in_channels, int out_channels, int stride,
                 std::mt19937_64& rng);

  MatrixXd forward(const MatrixXd& x) const override;
  MatrixXd backward(const MatrixXd& x, const MatrixXd& y, const MatrixXd& dy) override;
  void collect(ParameterList& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<UpsampleConv1d>(*this); }

 private:
  int in_;
  int out_;
  int stride_;
  Parameter weight_;  // in x (stride * out)
  Parameter bias_;    // 1 x out
};

class Tanh final : public Layer {
 public:
  MatrixXd forward(const MatrixXd& x) const override { return x.array().tanh().matrix(); }
  MatrixXd backward(const MatrixXd&, const MatrixXd& y, const MatrixXd& dy) override {
    return (dy.array() * (1.0 - y.array().square())).matrix();
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Tanh>(); }
};

// Activations of every layer, trace[0] = input, trace.back() = output.
using Trace = std::vector<MatrixXd>;

class Sequential {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  MatrixXd forward(const MatrixXd& x) const;
  MatrixXd forward(const MatrixXd& x, Trace& trace) const;
  MatrixXd backward(const Trace& trace, const MatrixXd& dy);

  ParameterList parameters();
  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

void zero_grad(const ParameterList& params);
double grad_norm(const ParameterList& params);
// Rescales gradients so their global norm is at most max_norm. Returns the
// norm before clipping.
double clip_grad_norm(const ParameterList& params, double max_norm);

class Adam {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  Adam() = default;
  Adam(ParameterList params, Options options);

  void step();
  const Options& options() const { return options_; }
  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  std::int64_t steps() const { return steps_; }

  void save(std::ostream& out) const;
  void load(std::istream& in);
  // Rebinds to a new parameter list with the same shapes (after a copy).
  void rebind(ParameterList params);

 private:
  ParameterList params_;
  Options options_;
  std::vector<MatrixXd> first_moment_;
  std::vector<MatrixXd> second_moment_;
  std::int64_t steps_ = 0;
};

void save_parameters(std::ostream& out, const ParameterList& params);
void load_parameters(std::istream& in, const ParameterList& params);

}  // namespace aud::nn

#endif  // AUD_NN_HPP_
