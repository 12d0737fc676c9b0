// src/nn.cpp

#include "aud/nn.hpp"

#include "aud/binary_io.hpp"

#include <cmath>

namespace aud::nn {

namespace {

MatrixXd glorot(int fan_in, int fan_out, Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  MatrixXd w(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) w(r, c) = dist(rng);
  return w;
}

Parameter make_param(std::string name, MatrixXd value) {
  Parameter p{std::move(name), std::move(value), {}};
  p.zero_grad();
  return p;
}

}  // namespace

// --- Conv1d ---------------------------------------------------------------

Conv1d::Conv1d(std::string name, int in_channels, int out_channels, int kernel, int stride,
               Padding padding, std::mt19937_64& rng)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), padding_(padding) {
  if (kernel < 1 || stride < 1) throw Error("conv " + name + ": kernel and stride must be positive");
  weight_ = make_param(name + ".weight",
                       glorot(kernel * in_channels, out_channels, kernel * in_channels, out_channels, rng));
  bias_ = make_param(name + ".bias", MatrixXd::Zero(1, out_channels));
}

Eigen::Index Conv1d::output_frames(Eigen::Index input_frames) const {
  if (padding_ == Padding::kSame) return (input_frames + stride_ - 1) / stride_;
  if (input_frames < kernel_) return 0;
  return (input_frames - kernel_) / stride_ + 1;
}

Eigen::Index Conv1d::first_tap(Eigen::Index out_frame) const {
  const Eigen::Index pad = padding_ == Padding::kSame ? (kernel_ - 1) / 2 : 0;
  return out_frame * stride_ - pad;
}

MatrixXd Conv1d::im2col(const MatrixXd& x) const {
  if (x.cols() != in_)
    throw Error(weight_.name + ": expected " + std::to_string(in_) + " input channels, got " +
                std::to_string(x.cols()));
  const Eigen::Index frames = output_frames(x.rows());
  MatrixXd cols = MatrixXd::Zero(frames, static_cast<Eigen::Index>(kernel_) * in_);
  for (Eigen::Index m = 0; m < frames; ++m) {
    const Eigen::Index start = first_tap(m);
    for (int j = 0; j < kernel_; ++j) {
      const Eigen::Index t = start + j;
      if (t < 0 || t >= x.rows()) continue;
      cols.block(m, static_cast<Eigen::Index>(j) * in_, 1, in_) = x.row(t);
    }
  }
  return cols;
}

MatrixXd Conv1d::forward(const MatrixXd& x) const {
  MatrixXd y = im2col(x) * weight_.value;
  y.rowwise() += bias_.value.row(0);
  return y;
}

MatrixXd Conv1d::backward(const MatrixXd& x, const MatrixXd&, const MatrixXd& dy) {
  const MatrixXd cols = im2col(x);
  weight_.grad.noalias() += cols.transpose() * dy;
  bias_.grad += dy.colwise().sum();
  const MatrixXd dcols = dy * weight_.value.transpose();
  MatrixXd dx = MatrixXd::Zero(x.rows(), x.cols());
  for (Eigen::Index m = 0; m < dcols.rows(); ++m) {
    const Eigen::Index start = first_tap(m);
    for (int j = 0; j < kernel_; ++j) {
      const Eigen::Index t = start + j;
      if (t < 0 || t >= x.rows()) continue;
      dx.row(t) += dcols.block(m, static_cast<Eigen::Index>(j) * in_, 1, in_);
    }
  }
  return dx;
}

void Conv1d::collect(ParameterList& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// --- UpsampleConv1d ---------------------------------------------------------

UpsampleConv1d::UpsampleConv1d(std::string name, int in_channels, int out_channels, int stride,
                               std::mt19937_64& rng)
    : in_(in_channels), out_(out_channels), stride_(stride) {
  if (stride < 1) throw Error("upsample " + name + ": stride must be positive");
  weight_ = make_param(name + ".weight",
                       glorot(in_channels, out_channels, in_channels, static_cast<Eigen::Index>(stride) * out_channels, rng));
  bias_ = make_param(name + ".bias", MatrixXd::Zero(1, out_channels));
}

MatrixXd UpsampleConv1d::forward(const MatrixXd& x) const {
  if (x.cols() != in_) throw Error(weight_.name + ": input channel mismatch");
  const MatrixXd expanded = x * weight_.value;  // M x (stride * out)
  MatrixXd y(x.rows() * stride_, out_);
  for (Eigen::Index m = 0; m < x.rows(); ++m)
    for (int j = 0; j < stride_; ++j)
      y.row(m * stride_ + j) = expanded.block(m, static_cast<Eigen::Index>(j) * out_, 1, out_) + bias_.value;
  return y;
}

MatrixXd UpsampleConv1d::backward(const MatrixXd& x, const MatrixXd&, const MatrixXd& dy) {
  MatrixXd dexpanded(x.rows(), static_cast<Eigen::Index>(stride_) * out_);
  for (Eigen::Index m = 0; m < x.rows(); ++m)
    for (int j = 0; j < stride_; ++j)
      dexpanded.block(m, static_cast<Eigen::Index>(j) * out_, 1, out_) = dy.row(m * stride_ + j);
  weight_.grad.noalias() += x.transpose() * dexpanded;
  bias_.grad += dy.colwise().sum();
  return dexpanded * weight_.value.transpose();
}

void UpsampleConv1d::collect(ParameterList& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// --- Sequential -------------------------------------------------------------

Sequential::Sequential(const Sequential& other) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    layers_.clear();
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  return *this;
}

MatrixXd Sequential::forward(const MatrixXd& x) const {
  MatrixXd h = x;
  for (const auto& l : layers_) h = l->forward(h);
  return h;
}

MatrixXd Sequential::forward(const MatrixXd& x, Trace& trace) const {
  trace.clear();
  trace.reserve(layers_.size() + 1);
  trace.push_back(x);
  for (const auto& l : layers_) trace.push_back(l->forward(trace.back()));
  return trace.back();
}

MatrixXd Sequential::backward(const Trace& trace, const MatrixXd& dy) {
  MatrixXd grad = dy;
  for (std::size_t i = layers_.size(); i-- > 0;)
    grad = layers_[i]->backward(trace[i], trace[i + 1], grad);
  return grad;
}

ParameterList Sequential::parameters() {
  ParameterList out;
  for (auto& l : layers_) l->collect(out);
  return out;
}

// --- optimisation -----------------------------------------------------------

void zero_grad(const ParameterList& params) {
  for (auto* p : params) p->zero_grad();
}

double grad_norm(const ParameterList& params) {
  double sq = 0.0;
  for (const auto* p : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

double clip_grad_norm(const ParameterList& params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto* p : params) p->grad *= scale;
  }
  return norm;
}

Adam::Adam(ParameterList params, Options options) : params_(std::move(params)), options_(options) {
  for (const auto* p : params_) {
    first_moment_.push_back(MatrixXd::Zero(p->value.rows(), p->value.cols()));
    second_moment_.push_back(MatrixXd::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  ++steps_;
  const double bias1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double bias2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    first_moment_[i] = options_.beta1 * first_moment_[i] + (1.0 - options_.beta1) * p.grad;
    second_moment_[i] = options_.beta2 * second_moment_[i] + (1.0 - options_.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= options_.learning_rate * (first_moment_[i].array() / bias1) /
                       ((second_moment_[i].array() / bias2).sqrt() + options_.epsilon);
  }
}

void Adam::rebind(ParameterList params) {
  if (params.size() != params_.size()) throw Error("adam rebind: parameter count mismatch");
  params_ = std::move(params);
}

void Adam::save(std::ostream& out) const {
  bin::write_pod<double>(out, options_.learning_rate);
  bin::write_pod<double>(out, options_.beta1);
  bin::write_pod<double>(out, options_.beta2);
  bin::write_pod<double>(out, options_.epsilon);
  bin::write_pod<std::int64_t>(out, steps_);
  bin::write_pod<std::uint64_t>(out, first_moment_.size());
  for (std::size_t i = 0; i < first_moment_.size(); ++i) {
    bin::write_matrix(out, first_moment_[i]);
    bin::write_matrix(out, second_moment_[i]);
  }
}

void Adam::load(std::istream& in) {
  options_.learning_rate = bin::read_pod<double>(in);
  options_.beta1 = bin::read_pod<double>(in);
  options_.beta2 = bin::read_pod<double>(in);
  options_.epsilon = bin::read_pod<double>(in);
  steps_ = bin::read_pod<std::int64_t>(in);
  const auto n = bin::read_pod<std::uint64_t>(in);
  if (n != params_.size()) throw Error("optimizer state does not match parameter count");
  for (std::size_t i = 0; i < n; ++i) {
    first_moment_[i] = bin::read_matrix(in);
    second_moment_[i] = bin::read_matrix(in);
    if (first_moment_[i].rows() != params_[i]->value.rows() ||
        first_moment_[i].cols() != params_[i]->value.cols())
      throw Error("optimizer state shape mismatch for " + params_[i]->name);
  }
}

void save_parameters(std::ostream& out, const ParameterList& params) {
  bin::write_pod<std::uint64_t>(out, params.size());
  for (const auto* p : params) {
    bin::write_string(out, p->name);
    bin::write_matrix(out, p->value);
  }
}

void load_parameters(std::istream& in, const ParameterList& params) {
  const auto n = bin::read_pod<std::uint64_t>(in);
  if (n != params.size())
    throw Error("checkpoint has " + std::to_string(n) + " parameters, model expects " +
                std::to_string(params.size()));
  for (auto* p : params) {
    const std::string name = bin::read_string(in);
    if (name != p->name) throw Error("checkpoint parameter " + name + " does not match " + p->name);
    MatrixXd value = bin::read_matrix(in);
    if (value.rows() != p->value.rows() || value.cols() != p->value.cols())
      throw Error("checkpoint parameter " + name + " has wrong shape");
    p->value = std::move(value);
    p->zero_grad();
  }
}

}  // namespace aud::nn
