#include "mofit/model_derivatives.hpp"

#include "mofit/errors.hpp"

namespace mofit {

ModelDerivatives fk_derivatives(const KinematicModel& model,
                                const ParamLayout& layout,
                                const Eigen::VectorXd& theta) {
  layout.check_vector(theta);
  const int J = model.num_joints();
  const int P = layout.size();
  const bool has_shape = layout.shape_dims > 0;
  const int shape_off = has_shape ? layout.shape_offset() : 0;

  ModelDerivatives md;
  md.layout = layout;
  md.fk = forward_kinematics(model, layout, theta);
  md.shaped = shaped_vertices(model, layout, theta);
  md.dR.assign(J, Eigen::MatrixXd::Zero(9, P));
  md.dt.assign(J, Eigen::MatrixXd::Zero(3, P));
  md.rot_jac.resize(J);

  for (int j = 0; j < J; ++j)
    md.rot_jac[j] = rot6d_to_matrix_jacobian(theta.segment<6>(layout.rot_offset(j)));

  for (int j = 0; j < J; ++j) {
    const int p = model.parents[j];
    const Mat3& Q = md.fk.local_rotations[j];
    // Local translation offset and its parameter derivative (3 x P, sparse).
    Vec3 offset;
    if (j == 0) {
      offset = md.fk.rest.row(0).transpose() +
               theta.segment<3>(layout.translation_offset());
    } else {
      offset = (md.fk.rest.row(j) - md.fk.rest.row(p)).transpose();
    }

    if (j == 0) {
      // World = local for the root.
      md.dR[0].block(0, layout.rot_offset(0), 9, 6) = md.rot_jac[0];
      for (int k = 0; k < 3; ++k)
        md.dt[0](k, layout.translation_offset() + k) = 1.0;
      if (has_shape && model.rest_joint_basis.size() > 0)
        md.dt[0].block(0, shape_off, 3, layout.shape_dims) +=
            model.rest_joint_basis.middleRows(0, 3);
      continue;
    }

    const Eigen::MatrixXd& dRp = md.dR[p];
    Eigen::MatrixXd& dRj = md.dR[j];
    Eigen::MatrixXd& dtj = md.dt[j];

    // dR_j = dR_p * Q + R_p * dQ.
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        for (int k = 0; k < 3; ++k)
          dRj.row(3 * r + c) += Q(k, c) * dRp.row(3 * r + k);
    const Mat3& Rp = md.fk.world[p].R;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        Eigen::Matrix<double, 1, 6> acc = Eigen::Matrix<double, 1, 6>::Zero();
        for (int k = 0; k < 3; ++k) acc += Rp(r, k) * md.rot_jac[j].row(3 * k + c);
        dRj.block(3 * r + c, layout.rot_offset(j), 1, 6) += acc;
      }

    // dt_j = dR_p * offset + R_p * d(offset) + dt_p.
    dtj = md.dt[p];
    for (int r = 0; r < 3; ++r)
      for (int k = 0; k < 3; ++k)
        dtj.row(r) += offset[k] * dRp.row(3 * r + k);
    if (has_shape && model.rest_joint_basis.size() > 0) {
      const Eigen::MatrixXd d_offset = model.rest_joint_basis.middleRows(3 * j, 3) -
                                       model.rest_joint_basis.middleRows(3 * p, 3);
      dtj.block(0, shape_off, 3, layout.shape_dims) += Rp * d_offset;
    }
  }
  return md;
}

const Eigen::MatrixXd& joint_position_jacobian(const ModelDerivatives& md, int j) {
  return md.dt[static_cast<std::size_t>(j)];
}

Eigen::MatrixXd transform_jacobian(const ModelDerivatives& md, int j) {
  const int P = md.param_count();
  Eigen::MatrixXd out(12, P);
  for (int r = 0; r < 3; ++r) {
    out.middleRows(4 * r, 3) = md.dR[static_cast<std::size_t>(j)].middleRows(3 * r, 3);
    out.row(4 * r + 3) = md.dt[static_cast<std::size_t>(j)].row(r);
  }
  return out;
}

Vec3 lbs_point(const ModelDerivatives& md, const KinematicModel& model, int v) {
  const Vec3 x = md.shaped.row(v).transpose();
  Vec3 acc = Vec3::Zero();
  for (int j = 0; j < model.num_joints(); ++j) {
    const double w = model.skinning(v, j);
    if (w == 0.0) continue;
    acc += w * (md.fk.world[j].R * (x - Vec3(md.fk.rest.row(j).transpose())) +
                md.fk.world[j].t);
  }
  return acc;
}

Eigen::MatrixXd lbs_point_jacobian(const ModelDerivatives& md,
                                   const KinematicModel& model, int v) {
  const int P = md.param_count();
  const ParamLayout& layout = md.layout;
  const bool has_shape = layout.shape_dims > 0;
  const Vec3 x = md.shaped.row(v).transpose();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(3, P);

  for (int j = 0; j < model.num_joints(); ++j) {
    const double w = model.skinning(v, j);
    if (w == 0.0) continue;
    const Vec3 local = x - Vec3(md.fk.rest.row(j).transpose());
    // dR_j * local + dt_j.
    for (int r = 0; r < 3; ++r) {
      for (int k = 0; k < 3; ++k)
        out.row(r) += w * local[k] * md.dR[j].row(3 * r + k);
      out.row(r) += w * md.dt[j].row(r);
    }
    // R_j * (dx_v - d rest_j).
    if (has_shape) {
      Eigen::MatrixXd d_local = Eigen::MatrixXd::Zero(3, layout.shape_dims);
      if (model.shape_basis.size() > 0)
        d_local += model.shape_basis.middleRows(3 * v, 3);
      if (model.rest_joint_basis.size() > 0)
        d_local -= model.rest_joint_basis.middleRows(3 * j, 3);
      out.block(0, layout.shape_offset(), 3, layout.shape_dims) +=
          w * md.fk.world[j].R * d_local;
    }
    if (layout.expr_dims > 0 && model.expression_basis.size() > 0) {
      out.block(0, layout.expr_offset(), 3, layout.expr_dims) +=
          w * md.fk.world[j].R * model.expression_basis.middleRows(3 * v, 3);
    }
  }
  return out;
}

Eigen::VectorXd model_pullback(const ModelDerivatives& md,
                               const KinematicModel& model,
                               const Eigen::MatrixXd* vertex_grad,
                               const std::vector<TransformAdjoint>* transform_grad,
                               const std::vector<Mat3>* local_rot_grad) {
  const int J = model.num_joints();
  const int P = md.param_count();
  const ParamLayout& layout = md.layout;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(P);

  std::vector<TransformAdjoint> adj(static_cast<std::size_t>(J));
  if (transform_grad) {
    if (static_cast<int>(transform_grad->size()) != J)
      throw ShapeMismatch("transform adjoint count mismatch");
    adj = *transform_grad;
  }

  if (vertex_grad) {
    if (vertex_grad->rows() != model.num_vertices() || vertex_grad->cols() != 3)
      throw ShapeMismatch("vertex gradient must be V x 3");
    const bool has_shape = layout.shape_dims > 0;
    Eigen::VectorXd shape_acc = Eigen::VectorXd::Zero(std::max(layout.shape_dims, 0));
    Eigen::VectorXd expr_acc = Eigen::VectorXd::Zero(std::max(layout.expr_dims, 0));
    for (int v = 0; v < model.num_vertices(); ++v) {
      const Vec3 g = vertex_grad->row(v).transpose();
      if (g.isZero(0.0)) continue;
      const Vec3 x = md.shaped.row(v).transpose();
      for (int j = 0; j < J; ++j) {
        const double w = model.skinning(v, j);
        if (w == 0.0) continue;
        const Vec3 local = x - Vec3(md.fk.rest.row(j).transpose());
        adj[j].R += w * g * local.transpose();
        adj[j].t += w * g;
        const Vec3 q = w * (md.fk.world[j].R.transpose() * g);
        if (has_shape) {
          if (model.shape_basis.size() > 0)
            shape_acc += model.shape_basis.middleRows(3 * v, 3).transpose() * q;
          if (model.rest_joint_basis.size() > 0)
            shape_acc -= model.rest_joint_basis.middleRows(3 * j, 3).transpose() * q;
        }
        if (layout.expr_dims > 0 && model.expression_basis.size() > 0)
          expr_acc += model.expression_basis.middleRows(3 * v, 3).transpose() * q;
      }
    }
    if (layout.shape_dims > 0)
      grad.segment(layout.shape_offset(), layout.shape_dims) += shape_acc;
    if (layout.expr_dims > 0)
      grad.segment(layout.expr_offset(), layout.expr_dims) += expr_acc;
  }

  for (int j = 0; j < J; ++j) {
    if (!adj[j].R.isZero(0.0)) {
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
          grad += adj[j].R(r, c) * md.dR[j].row(3 * r + c).transpose();
    }
    if (!adj[j].t.isZero(0.0))
      grad += md.dt[j].transpose() * adj[j].t;
  }

  if (local_rot_grad) {
    if (static_cast<int>(local_rot_grad->size()) != J)
      throw ShapeMismatch("local rotation adjoint count mismatch");
    for (int j = 0; j < J; ++j) {
      const Mat3& gR = (*local_rot_grad)[j];
      if (gR.isZero(0.0)) continue;
      Eigen::Matrix<double, 9, 1> flat;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) flat[3 * r + c] = gR(r, c);
      grad.segment<6>(layout.rot_offset(j)) += md.rot_jac[j].transpose() * flat;
    }
  }
  return grad;
}

}  // namespace mofit
