#include "mofit/neural.hpp"

#include <cmath>

#include "mofit/errors.hpp"

namespace mofit {

namespace {

Eigen::MatrixXd relu(const Eigen::MatrixXd& x) { return x.cwiseMax(0.0); }

Eigen::MatrixXd relu_backward(const Eigen::MatrixXd& pre, const Eigen::MatrixXd& dy) {
  return (pre.array() > 0.0).cast<double>() * dy.array();
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

void Linear::resize(int in, int out) {
  weight.resize(out, in);
  bias.resize(1, out);
}

Eigen::MatrixXd Linear::forward(const Eigen::MatrixXd& x) const {
  if (x.cols() != weight.value.cols())
    throw ShapeMismatch("linear input dimension mismatch");
  return (x * weight.value.transpose()).rowwise() + bias.value.row(0);
}

Eigen::MatrixXd Linear::backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy) {
  weight.grad += dy.transpose() * x;
  bias.grad.row(0) += dy.colwise().sum();
  return dy * weight.value;
}

void Linear::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".weight", weight);
  fn(prefix + ".bias", bias);
}

// ---------------------------------------------------------------------------
// LayerNorm
// ---------------------------------------------------------------------------

void LayerNorm::resize(int dim) {
  scale.resize(1, dim);
  scale.value.setOnes();
  offset.resize(1, dim);
}

Eigen::MatrixXd LayerNorm::forward(const Eigen::MatrixXd& x, Cache* cache) const {
  const Eigen::Index dim = x.cols();
  if (dim < 2) throw ShapeMismatch("layer norm needs dimension >= 2");
  Eigen::MatrixXd xhat(x.rows(), dim);
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    xhat.row(i) = (x.row(i).array() - mean) * inv;
  }
  if (cache) {
    cache->xhat = xhat;
    cache->inv_std = inv_std;
  }
  return (xhat.array().rowwise() * scale.value.row(0).array()).rowwise() +
         offset.value.row(0).array();
}

Eigen::MatrixXd LayerNorm::backward(const Cache& cache, const Eigen::MatrixXd& dy) {
  scale.grad.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  offset.grad.row(0) += dy.colwise().sum();

  Eigen::MatrixXd dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const Eigen::ArrayXd g =
        dy.row(i).transpose().array() * scale.value.row(0).transpose().array();
    const double g_mean = g.mean();
    const double gx_mean = (g * cache.xhat.row(i).transpose().array()).mean();
    dx.row(i) =
        (cache.inv_std[i] *
         (g - g_mean - cache.xhat.row(i).transpose().array() * gx_mean))
            .matrix()
            .transpose();
  }
  return dx;
}

void LayerNorm::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".scale", scale);
  fn(prefix + ".offset", offset);
}

// ---------------------------------------------------------------------------
// Mlp
// ---------------------------------------------------------------------------

void Mlp::resize(int in, int hidden_dim, int depth, int out, bool layer_norm) {
  use_layer_norm = layer_norm;
  hidden.resize(static_cast<std::size_t>(depth));
  norms.resize(static_cast<std::size_t>(depth));
  int cur = in;
  for (int i = 0; i < depth; ++i) {
    hidden[static_cast<std::size_t>(i)].resize(cur, hidden_dim);
    norms[static_cast<std::size_t>(i)].resize(hidden_dim);
    cur = hidden_dim;
  }
  output.resize(cur, out);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Cache* cache) const {
  Eigen::MatrixXd cur = x;
  if (cache) {
    cache->inputs.clear();
    cache->norm_caches.assign(hidden.size(), {});
    cache->pre_relu.clear();
  }
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (cache) cache->inputs.push_back(cur);
    Eigen::MatrixXd a = hidden[i].forward(cur);
    if (use_layer_norm)
      a = norms[i].forward(a, cache ? &cache->norm_caches[i] : nullptr);
    if (cache) cache->pre_relu.push_back(a);
    cur = relu(a);
  }
  if (cache) cache->head_input = cur;
  return output.forward(cur);
}

Eigen::MatrixXd Mlp::backward(const Cache& cache, const Eigen::MatrixXd& dy) {
  Eigen::MatrixXd cur = output.backward(cache.head_input, dy);
  for (std::size_t i = hidden.size(); i-- > 0;) {
    cur = relu_backward(cache.pre_relu[i], cur);
    if (use_layer_norm) cur = norms[i].backward(cache.norm_caches[i], cur);
    cur = hidden[i].backward(cache.inputs[i], cur);
  }
  return cur;
}

void Mlp::visit(const std::string& prefix, const ParamVisitor& fn) {
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    hidden[i].visit(prefix + ".h" + std::to_string(i), fn);
    if (use_layer_norm) norms[i].visit(prefix + ".ln" + std::to_string(i), fn);
  }
  output.visit(prefix + ".out", fn);
}

// ---------------------------------------------------------------------------
// GruCell
// ---------------------------------------------------------------------------

void GruCell::resize(int input, int units_, bool layer_norm) {
  use_layer_norm = layer_norm;
  Wz.resize(units_, input);
  Wr.resize(units_, input);
  Wh.resize(units_, input);
  Uz.resize(units_, units_);
  Ur.resize(units_, units_);
  Uh.resize(units_, units_);
  bz.resize(1, units_);
  br.resize(1, units_);
  bh.resize(1, units_);
  for (LayerNorm* ln : {&ln_wz, &ln_uz, &ln_wr, &ln_ur, &ln_wh, &ln_uh})
    ln->resize(units_);
}

Eigen::MatrixXd GruCell::forward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& h_prev,
                                 Cache* cache) const {
  if (x.rows() != h_prev.rows()) throw ShapeMismatch("gru batch size mismatch");
  if (x.cols() != input_dim() || h_prev.cols() != units())
    throw ShapeMismatch("gru input dimension mismatch");
  auto maybe_norm = [&](const LayerNorm& ln, const Eigen::MatrixXd& a,
                        LayerNorm::Cache* c) {
    return use_layer_norm ? ln.forward(a, c) : a;
  };
  Cache local;
  Cache* cc = cache ? cache : &local;
  cc->x = x;
  cc->h_prev = h_prev;

  const Eigen::MatrixXd az =
      maybe_norm(ln_wz, x * Wz.value.transpose(), &cc->c_wz) +
      maybe_norm(ln_uz, h_prev * Uz.value.transpose(), &cc->c_uz);
  cc->z = (1.0 / (1.0 + (-(az.rowwise() + bz.value.row(0))).array().exp())).matrix();

  const Eigen::MatrixXd ar =
      maybe_norm(ln_wr, x * Wr.value.transpose(), &cc->c_wr) +
      maybe_norm(ln_ur, h_prev * Ur.value.transpose(), &cc->c_ur);
  cc->r = (1.0 / (1.0 + (-(ar.rowwise() + br.value.row(0))).array().exp())).matrix();

  cc->rh = (cc->r.array() * h_prev.array()).matrix();
  const Eigen::MatrixXd ah =
      maybe_norm(ln_wh, x * Wh.value.transpose(), &cc->c_wh) +
      maybe_norm(ln_uh, cc->rh * Uh.value.transpose(), &cc->c_uh);
  cc->hc = (ah.rowwise() + bh.value.row(0)).array().tanh().matrix();

  return ((1.0 - cc->z.array()) * h_prev.array() + cc->z.array() * cc->hc.array())
      .matrix();
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> GruCell::backward(
    const Cache& cache, const Eigen::MatrixXd& dh_next) {
  Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(cache.x.rows(), cache.x.cols());
  Eigen::MatrixXd dh = (dh_next.array() * (1.0 - cache.z.array())).matrix();

  const Eigen::MatrixXd dz =
      (dh_next.array() * (cache.hc.array() - cache.h_prev.array())).matrix();
  const Eigen::MatrixXd dhc = (dh_next.array() * cache.z.array()).matrix();

  // Candidate path.
  const Eigen::MatrixXd dah =
      (dhc.array() * (1.0 - cache.hc.array().square())).matrix();
  bh.grad.row(0) += dah.colwise().sum();
  {
    const Eigen::MatrixXd d_wh =
        use_layer_norm ? ln_wh.backward(cache.c_wh, dah) : dah;
    Wh.grad += d_wh.transpose() * cache.x;
    dx += d_wh * Wh.value;
    const Eigen::MatrixXd d_uh =
        use_layer_norm ? ln_uh.backward(cache.c_uh, dah) : dah;
    Uh.grad += d_uh.transpose() * cache.rh;
    const Eigen::MatrixXd drh = d_uh * Uh.value;
    dh += (drh.array() * cache.r.array()).matrix();
    // Reset gate path.
    const Eigen::MatrixXd dr = (drh.array() * cache.h_prev.array()).matrix();
    const Eigen::MatrixXd dar =
        (dr.array() * cache.r.array() * (1.0 - cache.r.array())).matrix();
    br.grad.row(0) += dar.colwise().sum();
    const Eigen::MatrixXd d_wr =
        use_layer_norm ? ln_wr.backward(cache.c_wr, dar) : dar;
    Wr.grad += d_wr.transpose() * cache.x;
    dx += d_wr * Wr.value;
    const Eigen::MatrixXd d_ur =
        use_layer_norm ? ln_ur.backward(cache.c_ur, dar) : dar;
    Ur.grad += d_ur.transpose() * cache.h_prev;
    dh += d_ur * Ur.value;
  }

  // Update gate path.
  const Eigen::MatrixXd daz =
      (dz.array() * cache.z.array() * (1.0 - cache.z.array())).matrix();
  bz.grad.row(0) += daz.colwise().sum();
  const Eigen::MatrixXd d_wz = use_layer_norm ? ln_wz.backward(cache.c_wz, daz) : daz;
  Wz.grad += d_wz.transpose() * cache.x;
  dx += d_wz * Wz.value;
  const Eigen::MatrixXd d_uz = use_layer_norm ? ln_uz.backward(cache.c_uz, daz) : daz;
  Uz.grad += d_uz.transpose() * cache.h_prev;
  dh += d_uz * Uz.value;

  return {dx, dh};
}

void GruCell::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".Wz", Wz);
  fn(prefix + ".Wr", Wr);
  fn(prefix + ".Wh", Wh);
  fn(prefix + ".Uz", Uz);
  fn(prefix + ".Ur", Ur);
  fn(prefix + ".Uh", Uh);
  fn(prefix + ".bz", bz);
  fn(prefix + ".br", br);
  fn(prefix + ".bh", bh);
  if (use_layer_norm) {
    ln_wz.visit(prefix + ".ln_wz", fn);
    ln_uz.visit(prefix + ".ln_uz", fn);
    ln_wr.visit(prefix + ".ln_wr", fn);
    ln_ur.visit(prefix + ".ln_ur", fn);
    ln_wh.visit(prefix + ".ln_wh", fn);
    ln_uh.visit(prefix + ".ln_uh", fn);
  }
}

// ---------------------------------------------------------------------------
// ResidualMlp
// ---------------------------------------------------------------------------

void ResidualMlp::resize(int in, int units, int depth) {
  stem.resize(in, units);
  blocks.resize(static_cast<std::size_t>(depth));
  for (auto& b : blocks) {
    b.l1.resize(units, units);
    b.l2.resize(units, units);
    b.n1.resize(units);
    b.n2.resize(units);
  }
}

Eigen::MatrixXd ResidualMlp::forward(const Eigen::MatrixXd& x, Cache* cache) const {
  if (cache) {
    cache->x = x;
    cache->blocks.assign(blocks.size(), {});
  }
  Eigen::MatrixXd cur = stem.forward(x);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const Block& b = blocks[i];
    Cache::BlockCache* bc = cache ? &cache->blocks[i] : nullptr;
    if (bc) bc->input = cur;
    Eigen::MatrixXd a1 = b.n1.forward(b.l1.forward(cur), bc ? &bc->c1 : nullptr);
    if (bc) bc->a1_pre = a1;
    const Eigen::MatrixXd h = relu(a1);
    if (bc) bc->a1 = h;
    Eigen::MatrixXd a2 = b.n2.forward(b.l2.forward(h), bc ? &bc->c2 : nullptr);
    Eigen::MatrixXd pre = cur + a2;  // additive skip every two linear layers
    if (bc) bc->a2_pre = pre;
    cur = relu(pre);
  }
  return cur;
}

Eigen::MatrixXd ResidualMlp::backward(const Cache& cache, const Eigen::MatrixXd& dy) {
  Eigen::MatrixXd cur = dy;
  for (std::size_t i = blocks.size(); i-- > 0;) {
    Block& b = blocks[i];
    const Cache::BlockCache& bc = cache.blocks[i];
    cur = relu_backward(bc.a2_pre, cur);
    Eigen::MatrixXd branch = b.n2.backward(bc.c2, cur);
    branch = b.l2.backward(bc.a1, branch);
    branch = relu_backward(bc.a1_pre, branch);
    branch = b.n1.backward(bc.c1, branch);
    cur += b.l1.backward(bc.input, branch);  // skip connection gradient
  }
  return stem.backward(cache.x, cur);
}

void ResidualMlp::visit(const std::string& prefix, const ParamVisitor& fn) {
  stem.visit(prefix + ".stem", fn);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = prefix + ".block" + std::to_string(i);
    blocks[i].l1.visit(p + ".l1", fn);
    blocks[i].l2.visit(p + ".l2", fn);
    blocks[i].n1.visit(p + ".n1", fn);
    blocks[i].n2.visit(p + ".n2", fn);
  }
}

// ---------------------------------------------------------------------------
// Dropout, Adam, init
// ---------------------------------------------------------------------------

Eigen::MatrixXd dropout(const Eigen::MatrixXd& x, double p, bool training, Rng& rng,
                        Eigen::MatrixXd* mask_out) {
  if (p < 0.0 || p >= 1.0) throw BadConfig("dropout probability must be in [0, 1)");
  if (!training || p == 0.0) {
    if (mask_out) mask_out->setOnes(x.rows(), x.cols());
    return x;
  }
  const double keep_scale = 1.0 / (1.0 - p);
  Eigen::MatrixXd mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      mask(i, j) = rng.uniform() < p ? 0.0 : keep_scale;
  if (mask_out) *mask_out = mask;
  return (x.array() * mask.array()).matrix();
}

Adam::Adam(std::vector<Tensor*> params, AdamOptions opts)
    : params_(std::move(params)), opts_(opts) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor* t : params_) {
    m_.emplace_back(Eigen::MatrixXd::Zero(t->value.rows(), t->value.cols()));
    v_.emplace_back(Eigen::MatrixXd::Zero(t->value.rows(), t->value.cols()));
  }
}

void Adam::step() {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = *params_[i];
    if (!t.grad.allFinite()) throw NonFiniteState("non-finite gradient in Adam step");
    m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * t.grad;
    v_[i] = (opts_.beta2 * v_[i].array() +
             (1.0 - opts_.beta2) * t.grad.array().square())
                .matrix();
    t.value.array() -= opts_.lr * (m_[i].array() / bc1) /
                       ((v_[i].array() / bc2).sqrt() + opts_.eps);
  }
}

void Adam::zero_grad() {
  for (Tensor* t : params_) t->zero_grad();
}

void Adam::restore(const std::vector<Eigen::MatrixXd>& m,
                   const std::vector<Eigen::MatrixXd>& v, std::int64_t step_count) {
  if (m.size() != m_.size() || v.size() != v_.size())
    throw ShapeMismatch("adam state size mismatch");
  m_ = m;
  v_ = v;
  step_count_ = step_count;
}

void glorot_init(Tensor& t, double gain, Rng& rng) {
  const double fan_in = static_cast<double>(t.value.cols());
  const double fan_out = static_cast<double>(t.value.rows());
  const double limit = gain * std::sqrt(6.0 / (fan_in + fan_out));
  for (Eigen::Index i = 0; i < t.value.rows(); ++i)
    for (Eigen::Index j = 0; j < t.value.cols(); ++j)
      t.value(i, j) = rng.uniform(-limit, limit);
}

}  // namespace mofit
