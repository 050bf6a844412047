// SPDX-License-Identifier: Apache-2.0
#include <e2y/error.hpp>
#include <e2y/recurrent.hpp>

#include <cmath>

namespace e2y {

CellKind cell_kind_from_string(const std::string &s) {
  if (s == "gru" || s == "GRU")
    return CellKind::gru;
  if (s == "lstm" || s == "LSTM")
    return CellKind::lstm;
  throw ValidationError("unknown recurrent cell '" + s + "' (expected gru or lstm)");
}

std::string to_string(CellKind c) { return c == CellKind::gru ? "gru" : "lstm"; }

void RecurrentSpec::validate() const {
  if (num_layers < 1)
    throw ValidationError("recurrent num_layers must be >= 1");
  if (hidden_units < 1)
    throw ValidationError("recurrent hidden_units must be >= 1");
}

namespace {

using Array = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Matrix sigmoid(const Matrix &a) { return (1.0 / (1.0 + (-a.array()).exp())).matrix(); }

class RecurrentLayer {
public:
  RecurrentLayer(const std::string &prefix, CellKind cell, std::size_t input_width,
                 std::size_t hidden, Rng &rng)
    : cell_(cell), hidden_(static_cast<Eigen::Index>(hidden)),
      gates_(cell == CellKind::gru ? 3 : 4),
      w_(prefix + ".input_kernel", static_cast<Eigen::Index>(input_width), gates_ * hidden_),
      u_(prefix + ".recurrent_kernel", hidden_, gates_ * hidden_),
      b_(prefix + ".bias", 1, gates_ * hidden_) {
    b_.shape = {static_cast<std::size_t>(gates_ * hidden_)};
    double limit = std::sqrt(6.0 / static_cast<double>(input_width + gates_ * hidden));
    fill_uniform(w_.value, limit, rng);
    for (Eigen::Index g = 0; g < gates_; ++g)
      u_.value.middleCols(g * hidden_, hidden_) = random_orthogonal(hidden_, rng);
    if (cell_ == CellKind::lstm)
      b_.value.middleCols(hidden_, hidden_).setOnes();
  }

  std::vector<Parameter *> parameters() { return {&w_, &u_, &b_}; }

  Matrix forward(const Matrix &x, const StepMask &mask) {
    batch_ = static_cast<Eigen::Index>(mask.batch);
    seq_ = static_cast<Eigen::Index>(mask.seq);
    x_ = x;
    Matrix xw = x * w_.value;
    xw.rowwise() += b_.value.row(0);
    const Eigen::Index H = hidden_;
    Matrix h = Matrix::Zero(batch_, H), c = Matrix::Zero(batch_, H);
    Matrix out = Matrix::Zero(x.rows(), H);
    steps_.assign(static_cast<std::size_t>(seq_), {});
    for (Eigen::Index t = 0; t < seq_; ++t) {
      auto &st = steps_[static_cast<std::size_t>(t)];
      Matrix a(batch_, gates_ * H);
      st.m.resize(batch_, 1);
      for (Eigen::Index b = 0; b < batch_; ++b) {
        a.row(b) = xw.row(b * seq_ + t);
        st.m(b, 0) = mask.on(static_cast<std::size_t>(b * seq_ + t)) ? 1.0 : 0.0;
      }
      st.h_prev = h;
      Matrix h_new;
      if (cell_ == CellKind::gru) {
        a.leftCols(2 * H).noalias() += h * u_.value.leftCols(2 * H);
        st.z = sigmoid(a.leftCols(H));
        st.r = sigmoid(a.middleCols(H, H));
        st.rh = (st.r.array() * h.array()).matrix();
        Matrix an = a.rightCols(H);
        an.noalias() += st.rh * u_.value.rightCols(H);
        st.n = an.array().tanh().matrix();
        h_new = ((1.0 - st.z.array()) * st.n.array() + st.z.array() * h.array()).matrix();
      } else {
        a.noalias() += h * u_.value;
        st.c_prev = c;
        st.i = sigmoid(a.leftCols(H));
        st.f = sigmoid(a.middleCols(H, H));
        st.g = a.middleCols(2 * H, H).array().tanh().matrix();
        st.o = sigmoid(a.rightCols(H));
        Matrix c_new = (st.f.array() * c.array() + st.i.array() * st.g.array()).matrix();
        st.tc = c_new.array().tanh().matrix();
        h_new = (st.o.array() * st.tc.array()).matrix();
        c = (c_new.array().colwise() * st.m.col(0).array() +
             c.array().colwise() * (1.0 - st.m.col(0).array()))
              .matrix();
      }
      h = (h_new.array().colwise() * st.m.col(0).array() +
           h.array().colwise() * (1.0 - st.m.col(0).array()))
            .matrix();
      for (Eigen::Index b = 0; b < batch_; ++b)
        out.row(b * seq_ + t) = h.row(b) * st.m(b, 0);
    }
    return out;
  }

  Matrix backward(const Matrix &dy) {
    const Eigen::Index H = hidden_;
    Matrix dxw = Matrix::Zero(batch_ * seq_, gates_ * H);
    Matrix dh = Matrix::Zero(batch_, H), dc = Matrix::Zero(batch_, H);
    for (Eigen::Index t = seq_ - 1; t >= 0; --t) {
      const auto &st = steps_[static_cast<std::size_t>(t)];
      auto m = st.m.col(0).array();
      Matrix dht = dh;
      for (Eigen::Index b = 0; b < batch_; ++b)
        dht.row(b) += dy.row(b * seq_ + t) * st.m(b, 0);
      Matrix dh_new = (dht.array().colwise() * m).matrix();
      Matrix dh_prev = (dht.array().colwise() * (1.0 - m)).matrix();
      Matrix da(batch_, gates_ * H);
      if (cell_ == CellKind::gru) {
        Array dn = dh_new.array() * (1.0 - st.z.array());
        Array dz = dh_new.array() * (st.h_prev.array() - st.n.array());
        dh_prev.array() += dh_new.array() * st.z.array();
        Matrix dan = (dn * (1.0 - st.n.array().square())).matrix();
        u_.grad.rightCols(H).noalias() += st.rh.transpose() * dan;
        Matrix drh = dan * u_.value.rightCols(H).transpose();
        Array dr = drh.array() * st.h_prev.array();
        dh_prev.array() += drh.array() * st.r.array();
        da.leftCols(H) = (dz * st.z.array() * (1.0 - st.z.array())).matrix();
        da.middleCols(H, H) = (dr * st.r.array() * (1.0 - st.r.array())).matrix();
        da.rightCols(H) = dan;
        u_.grad.leftCols(2 * H).noalias() += st.h_prev.transpose() * da.leftCols(2 * H);
        dh_prev.noalias() += da.leftCols(2 * H) * u_.value.leftCols(2 * H).transpose();
      } else {
        Matrix dc_new = (dc.array().colwise() * m).matrix();
        Matrix dc_prev = (dc.array().colwise() * (1.0 - m)).matrix();
        Array d_o = dh_new.array() * st.tc.array();
        dc_new.array() += dh_new.array() * st.o.array() * (1.0 - st.tc.array().square());
        Array df = dc_new.array() * st.c_prev.array();
        Array di = dc_new.array() * st.g.array();
        Array dg = dc_new.array() * st.i.array();
        dc_prev.array() += dc_new.array() * st.f.array();
        da.leftCols(H) = (di * st.i.array() * (1.0 - st.i.array())).matrix();
        da.middleCols(H, H) = (df * st.f.array() * (1.0 - st.f.array())).matrix();
        da.middleCols(2 * H, H) = (dg * (1.0 - st.g.array().square())).matrix();
        da.rightCols(H) = (d_o * st.o.array() * (1.0 - st.o.array())).matrix();
        u_.grad.noalias() += st.h_prev.transpose() * da;
        dh_prev.noalias() += da * u_.value.transpose();
        dc = dc_prev;
      }
      for (Eigen::Index b = 0; b < batch_; ++b)
        dxw.row(b * seq_ + t) = da.row(b);
      dh = dh_prev;
    }
    w_.grad.noalias() += x_.transpose() * dxw;
    b_.grad.row(0) += dxw.colwise().sum();
    Matrix dx = dxw * w_.value.transpose();
    steps_.clear();
    x_.resize(0, 0);
    return dx;
  }

private:
  struct StepCache {
    Matrix m, h_prev;
    Matrix z, r, n, rh;        // GRU
    Matrix c_prev, i, f, g, o, tc; // LSTM
  };

  CellKind cell_;
  Eigen::Index hidden_, gates_;
  Parameter w_, u_, b_;
  Eigen::Index batch_ = 0, seq_ = 0;
  Matrix x_;
  std::vector<StepCache> steps_;
};

class Recurrent final : public Block {
public:
  Recurrent(const std::string &name, const RecurrentSpec &spec, std::size_t input_width,
            Rng &rng)
    : width_(spec.hidden_units) {
    spec.validate();
    std::size_t in = input_width;
    for (std::size_t l = 0; l < spec.num_layers; ++l) {
      layers_.emplace_back(name + "/layer" + std::to_string(l + 1), spec.cell, in,
                           spec.hidden_units, rng);
      in = spec.hidden_units;
    }
  }

  Matrix forward(std::span<const Matrix *const> inputs, const StepMask &mask) override {
    const Matrix &x = *inputs[0];
    if (static_cast<std::size_t>(x.rows()) != mask.rows())
      throw ShapeError("recurrent block: input rows do not match batch x seq");
    Matrix cur = x;
    for (auto &layer : layers_)
      cur = layer.forward(cur, mask);
    return cur;
  }

  std::vector<Matrix> backward(const Matrix &grad_output) override {
    Matrix g = grad_output;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
      g = it->backward(g);
    return {std::move(g)};
  }

  std::vector<Parameter *> parameters() override {
    std::vector<Parameter *> out;
    for (auto &layer : layers_)
      for (auto *p : layer.parameters())
        out.push_back(p);
    return out;
  }

  std::size_t output_width() const override { return width_; }

private:
  std::size_t width_;
  std::vector<RecurrentLayer> layers_;
};

} // namespace

std::unique_ptr<Block> make_recurrent(const std::string &name, const RecurrentSpec &spec,
                                      std::size_t input_width, Rng &rng) {
  return std::make_unique<Recurrent>(name, spec, input_width, rng);
}

} // namespace e2y
