#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mofit/rng.hpp"

namespace mofit {

// Batched layers in double precision with analytic forward/backward passes.
// Matrices are row-per-sample; every layer owns its parameters and gradient
// accumulators and exposes them through visit() for the optimizer and
// checkpointing.

struct Tensor {
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;

  void resize(Eigen::Index rows, Eigen::Index cols) {
    value.setZero(rows, cols);
    grad.setZero(rows, cols);
  }
  void zero_grad() { grad.setZero(); }
};

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

struct Linear {
  Tensor weight;  // out x in
  Tensor bias;    // 1 x out

  void resize(int in, int out);
  int in_dim() const { return static_cast<int>(weight.value.cols()); }
  int out_dim() const { return static_cast<int>(weight.value.rows()); }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
  // Accumulates weight/bias gradients and returns dL/dx.
  Eigen::MatrixXd backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct LayerNorm {
  Tensor scale;   // 1 x dim
  Tensor offset;  // 1 x dim
  double eps = 1e-5;

  void resize(int dim);

  struct Cache {
    Eigen::MatrixXd xhat;
    Eigen::VectorXd inv_std;
  };
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache* cache) const;
  Eigen::MatrixXd backward(const Cache& cache, const Eigen::MatrixXd& dy);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// [Linear -> LayerNorm -> ReLU] x depth, then a linear output head.
struct Mlp {
  std::vector<Linear> hidden;
  std::vector<LayerNorm> norms;
  Linear output;
  bool use_layer_norm = true;

  void resize(int in, int hidden_dim, int depth, int out, bool layer_norm = true);

  struct Cache {
    std::vector<Eigen::MatrixXd> inputs;      // input to each hidden linear
    std::vector<LayerNorm::Cache> norm_caches;
    std::vector<Eigen::MatrixXd> pre_relu;
    Eigen::MatrixXd head_input;
  };
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache* cache) const;
  Eigen::MatrixXd backward(const Cache& cache, const Eigen::MatrixXd& dy);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// GRU cell with layer normalization on the input and recurrent pre-activations:
//   z = sigmoid(LN(Wz x) + LN(Uz h) + bz)
//   r = sigmoid(LN(Wr x) + LN(Ur h) + br)
//   hc = tanh(LN(Wh x) + LN(Uh (r .* h)) + bh)
//   h' = (1 - z) .* h + z .* hc
struct GruCell {
  Tensor Wz, Wr, Wh;  // units x input
  Tensor Uz, Ur, Uh;  // units x units
  Tensor bz, br, bh;  // 1 x units
  LayerNorm ln_wz, ln_uz, ln_wr, ln_ur, ln_wh, ln_uh;
  bool use_layer_norm = true;

  void resize(int input, int units, bool layer_norm = true);
  int units() const { return static_cast<int>(Uz.value.rows()); }
  int input_dim() const { return static_cast<int>(Wz.value.cols()); }

  struct Cache {
    Eigen::MatrixXd x, h_prev, z, r, hc, rh;
    LayerNorm::Cache c_wz, c_uz, c_wr, c_ur, c_wh, c_uh;
  };
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& h_prev,
                          Cache* cache) const;
  // Returns (dx, dh_prev) given dL/dh'.
  std::pair<Eigen::MatrixXd, Eigen::MatrixXd> backward(const Cache& cache,
                                                       const Eigen::MatrixXd& dh_next);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Feed-forward ablation network: stem linear plus residual blocks with an
// additive skip every two linear layers.
struct ResidualMlp {
  Linear stem;
  struct Block {
    Linear l1, l2;
    LayerNorm n1, n2;
  };
  std::vector<Block> blocks;

  void resize(int in, int units, int depth);

  struct Cache {
    Eigen::MatrixXd x;
    struct BlockCache {
      Eigen::MatrixXd input, a1_pre, a1, a2_pre;
      LayerNorm::Cache c1, c2;
    };
    std::vector<BlockCache> blocks;
  };
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache* cache) const;
  Eigen::MatrixXd backward(const Cache& cache, const Eigen::MatrixXd& dy);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Inverted dropout: scales kept activations by 1/(1-p) during training and is
// the identity in eval mode. The mask is emitted for the backward pass.
Eigen::MatrixXd dropout(const Eigen::MatrixXd& x, double p, bool training, Rng& rng,
                        Eigen::MatrixXd* mask_out = nullptr);

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Tensor*> params, AdamOptions opts);

  void step();
  void zero_grad();
  void set_lr(double lr) { opts_.lr = lr; }
  double lr() const { return opts_.lr; }
  std::int64_t step_count() const { return step_count_; }

  // Moment arrays keyed by position, for checkpointing.
  const std::vector<Eigen::MatrixXd>& first_moments() const { return m_; }
  const std::vector<Eigen::MatrixXd>& second_moments() const { return v_; }
  void restore(const std::vector<Eigen::MatrixXd>& m,
               const std::vector<Eigen::MatrixXd>& v, std::int64_t step_count);

 private:
  std::vector<Tensor*> params_;
  AdamOptions opts_;
  std::vector<Eigen::MatrixXd> m_, v_;
  std::int64_t step_count_ = 0;
};

// Glorot-uniform initialization; output heads use gain 0.01.
void glorot_init(Tensor& t, double gain, Rng& rng);

}  // namespace mofit
