// SPDX-License-Identifier: Apache-2.0
#include <e2y/error.hpp>
#include <e2y/fully_connected.hpp>

#include <cmath>
#include <numeric>

namespace e2y {

void FullyConnectedSpec::validate() const {
  if (layers.empty())
    throw ValidationError("fully connected block needs at least one layer");
  for (const auto &l : layers)
    if (l.width < 1)
      throw ValidationError("fully connected layer widths must be >= 1");
}

namespace {

class FullyConnected final : public Block {
public:
  FullyConnected(const std::string &name, const FullyConnectedSpec &spec,
                 std::size_t input_width, Rng &rng)
    : input_width_(input_width) {
    spec.validate();
    std::size_t in = input_width;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      Layer layer;
      layer.activation = spec.layers[i].activation;
      if (spec.head && i + 1 == spec.layers.size())
        layer.activation = Activation::linear;
      const auto out = static_cast<Eigen::Index>(spec.layers[i].width);
      const auto prefix = name + "/dense" + std::to_string(i + 1);
      layer.weight = Parameter(prefix + ".weight", static_cast<Eigen::Index>(in), out);
      layer.bias = Parameter(prefix + ".bias", 1, out);
      layer.bias.shape = {spec.layers[i].width};
      // Fan-in scaled uniform; wider for rectified layers.
      double gain = layer.activation == Activation::relu ? 6.0 : 3.0;
      fill_uniform(layer.weight.value, std::sqrt(gain / static_cast<double>(in)), rng);
      layers_.push_back(std::move(layer));
      in = spec.layers[i].width;
    }
  }

  Matrix forward(std::span<const Matrix *const> inputs, const StepMask &) override {
    const Matrix &x = *inputs[0];
    if (static_cast<std::size_t>(x.cols()) != input_width_)
      throw ShapeError("fully connected block expects width " +
                       std::to_string(input_width_) + ", got " + std::to_string(x.cols()));
    Matrix cur = x;
    for (auto &l : layers_) {
      l.input = cur;
      cur = cur * l.weight.value;
      cur.rowwise() += l.bias.value.row(0);
      apply_activation(l.activation, cur);
      l.output = cur;
    }
    return cur;
  }

  std::vector<Matrix> backward(const Matrix &grad_output) override {
    Matrix g = grad_output;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      activation_backward(it->activation, it->output, g);
      it->weight.grad.noalias() += it->input.transpose() * g;
      it->bias.grad.row(0) += g.colwise().sum();
      g = g * it->weight.value.transpose();
      it->input.resize(0, 0);
      it->output.resize(0, 0);
    }
    return {std::move(g)};
  }

  std::vector<Parameter *> parameters() override {
    std::vector<Parameter *> out;
    for (auto &l : layers_) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }

  std::size_t output_width() const override {
    return static_cast<std::size_t>(layers_.back().weight.value.cols());
  }

private:
  struct Layer {
    Activation activation = Activation::relu;
    Parameter weight, bias;
    Matrix input, output;
  };
  std::size_t input_width_;
  std::vector<Layer> layers_;
};

class Concat final : public Block {
public:
  explicit Concat(std::vector<std::size_t> widths) : widths_(std::move(widths)) {}

  Matrix forward(std::span<const Matrix *const> inputs, const StepMask &) override {
    if (inputs.size() != widths_.size())
      throw ShapeError("concat: wrong number of inputs");
    const Eigen::Index rows = inputs[0]->rows();
    Matrix out(rows, static_cast<Eigen::Index>(output_width()));
    Eigen::Index col = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (inputs[i]->rows() != rows ||
          static_cast<std::size_t>(inputs[i]->cols()) != widths_[i])
        throw ShapeError("concat: input " + std::to_string(i) + " has shape " +
                         std::to_string(inputs[i]->rows()) + "x" +
                         std::to_string(inputs[i]->cols()));
      out.middleCols(col, inputs[i]->cols()) = *inputs[i];
      col += inputs[i]->cols();
    }
    return out;
  }

  std::vector<Matrix> backward(const Matrix &grad_output) override {
    std::vector<Matrix> grads;
    Eigen::Index col = 0;
    for (auto w : widths_) {
      grads.emplace_back(grad_output.middleCols(col, static_cast<Eigen::Index>(w)));
      col += static_cast<Eigen::Index>(w);
    }
    return grads;
  }

  std::size_t output_width() const override {
    return std::accumulate(widths_.begin(), widths_.end(), std::size_t{0});
  }

private:
  std::vector<std::size_t> widths_;
};

} // namespace

std::unique_ptr<Block> make_fully_connected(const std::string &name,
                                            const FullyConnectedSpec &spec,
                                            std::size_t input_width, Rng &rng) {
  return std::make_unique<FullyConnected>(name, spec, input_width, rng);
}

std::unique_ptr<Block> make_concat(std::vector<std::size_t> input_widths) {
  return std::make_unique<Concat>(std::move(input_widths));
}

} // namespace e2y
