#include "mofit/model.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "mofit/container.hpp"
#include "mofit/errors.hpp"
#include "mofit/rng.hpp"

namespace mofit {

std::string task_name(Task t) {
  switch (t) {
    case Task::Body2D: return "body2d";
    case Task::Hmd: return "hmd";
    case Task::Face: return "face";
  }
  throw BadConfig("unknown task enum");
}

Task task_from_name(const std::string& name) {
  if (name == "body2d") return Task::Body2D;
  if (name == "hmd") return Task::Hmd;
  if (name == "face") return Task::Face;
  throw BadConfig("unknown task: " + name);
}

int ParamLayout::size() const {
  int n = 6 * joints + 3;
  if (task == Task::Face) n += expr_dims + shape_dims;
  if (task == Task::Body2D) n += shape_dims + 3;
  return n;
}

int ParamLayout::expr_offset() const {
  if (task != Task::Face) throw ShapeMismatch("expression block only exists for face");
  return 6 * joints + 3;
}

int ParamLayout::shape_offset() const {
  if (task == Task::Face) return 6 * joints + 3 + expr_dims;
  if (task == Task::Body2D) return 6 * joints + 3;
  throw ShapeMismatch("shape block not present in this layout");
}

int ParamLayout::camera_offset() const {
  if (task != Task::Body2D) throw ShapeMismatch("camera block only exists for body2d");
  return 6 * joints + 3 + shape_dims;
}

void ParamLayout::check_vector(const Eigen::VectorXd& theta) const {
  if (theta.size() != size())
    throw ShapeMismatch("parameter vector has size " + std::to_string(theta.size()) +
                        ", layout expects " + std::to_string(size()));
}

void KinematicModel::validate() const {
  const int V = num_vertices();
  const int J = num_joints();
  if (V <= 0 || J <= 0) throw ShapeMismatch("empty model");
  if (template_vertices.cols() != 3) throw ShapeMismatch("template must be V x 3");
  if (parents[0] != -1) throw ShapeMismatch("parents[0] must be the root sentinel -1");
  for (int j = 1; j < J; ++j)
    if (parents[j] < 0 || parents[j] >= j)
      throw ShapeMismatch("parents must be topologically ordered");
  if (rest_joint_mean.rows() != J || rest_joint_mean.cols() != 3)
    throw ShapeMismatch("rest_joint_mean must be J x 3");
  const int nb = num_shape_dims();
  if (rest_joint_basis.size() > 0 &&
      (rest_joint_basis.rows() != 3 * J || rest_joint_basis.cols() != nb))
    throw ShapeMismatch("rest_joint_basis must be (3J) x n_shape");
  if (shape_basis.size() > 0 && shape_basis.rows() != 3 * V)
    throw ShapeMismatch("shape_basis must be (3V) x n_shape");
  if (expression_basis.size() > 0 && expression_basis.rows() != 3 * V)
    throw ShapeMismatch("expression_basis must be (3V) x n_expr");
  if (skinning.rows() != V || skinning.cols() != J)
    throw ShapeMismatch("skinning must be V x J");
  if (skinning.minCoeff() < 0.0) throw DegenerateInput("negative skinning weight");
  for (int v = 0; v < V; ++v)
    if (std::abs(skinning.row(v).sum() - 1.0) > 1e-9)
      throw DegenerateInput("skinning row does not sum to 1");
  auto check_vertex_index = [V](int i, const char* what) {
    if (i < 0 || i >= V) throw ShapeMismatch(std::string("vertex index out of range: ") + what);
  };
  for (int i : landmark_indices) check_vertex_index(i, "landmark");
  for (int i : fingertip_left) check_vertex_index(i, "fingertip_left");
  for (int i : fingertip_right) check_vertex_index(i, "fingertip_right");
  for (int i : part_head) check_vertex_index(i, "part_head");
  for (int i : part_left_hand) check_vertex_index(i, "part_left_hand");
  for (int i : part_right_hand) check_vertex_index(i, "part_right_hand");
  auto check_joint_index = [J](int i, const char* what) {
    if (i < -1 || i >= J) throw ShapeMismatch(std::string("joint index out of range: ") + what);
  };
  check_joint_index(head_joint, "head_joint");
  check_joint_index(wrist_left, "wrist_left");
  check_joint_index(wrist_right, "wrist_right");
  for (Eigen::Index e = 0; e < edges.rows(); ++e) {
    check_vertex_index(edges(e, 0), "edge");
    check_vertex_index(edges(e, 1), "edge");
  }
}

ParamLayout KinematicModel::layout(Task task) const {
  ParamLayout l;
  l.task = task;
  l.joints = num_joints();
  switch (task) {
    case Task::Hmd:
      break;  // rotations + root translation only; shape assumed given
    case Task::Body2D:
      l.shape_dims = num_shape_dims();
      break;
    case Task::Face:
      l.shape_dims = num_shape_dims();
      l.expr_dims = num_expr_dims();
      break;
  }
  return l;
}

Eigen::MatrixXd rest_joints(const KinematicModel& model, const Eigen::VectorXd& beta) {
  const int J = model.num_joints();
  if (model.rest_joint_basis.size() > 0 && beta.size() != model.rest_joint_basis.cols())
    throw ShapeMismatch("beta size does not match rest joint basis");
  Eigen::MatrixXd joints = model.rest_joint_mean;
  if (model.rest_joint_basis.size() > 0 && beta.size() > 0) {
    const Eigen::VectorXd delta = model.rest_joint_basis * beta;
    for (int j = 0; j < J; ++j)
      joints.row(j) += delta.segment<3>(3 * j).transpose();
  }
  return joints;
}

namespace {

Eigen::VectorXd shape_coeffs(const KinematicModel& model, const ParamLayout& layout,
                             const Eigen::VectorXd& theta) {
  if (layout.shape_dims > 0)
    return theta.segment(layout.shape_offset(), layout.shape_dims);
  return Eigen::VectorXd::Zero(model.num_shape_dims());
}

}  // namespace

FkResult forward_kinematics(const KinematicModel& model, const ParamLayout& layout,
                            const Eigen::VectorXd& theta) {
  layout.check_vector(theta);
  if (layout.joints != model.num_joints())
    throw ShapeMismatch("layout joint count does not match model");
  const int J = model.num_joints();

  FkResult out;
  out.rest = rest_joints(model, shape_coeffs(model, layout, theta));
  out.local_rotations.resize(J);
  out.world.resize(J);
  const Vec3 root_translation = theta.segment<3>(layout.translation_offset());

  for (int j = 0; j < J; ++j) {
    out.local_rotations[j] = rot6d_to_matrix(theta.segment<6>(layout.rot_offset(j)));
    RigidTransform local;
    local.R = out.local_rotations[j];
    if (j == 0) {
      local.t = out.rest.row(0).transpose() + root_translation;
      out.world[0] = local;
    } else {
      local.t = (out.rest.row(j) - out.rest.row(model.parents[j])).transpose();
      out.world[j] = compose(out.world[model.parents[j]], local);
    }
  }
  return out;
}

Eigen::MatrixXd shaped_vertices(const KinematicModel& model, const ParamLayout& layout,
                                const Eigen::VectorXd& theta) {
  layout.check_vector(theta);
  Eigen::MatrixXd verts = model.template_vertices;
  const int V = model.num_vertices();
  const Eigen::VectorXd beta = shape_coeffs(model, layout, theta);
  if (model.shape_basis.size() > 0 && beta.size() > 0) {
    const Eigen::VectorXd delta = model.shape_basis * beta;
    for (int v = 0; v < V; ++v) verts.row(v) += delta.segment<3>(3 * v).transpose();
  }
  if (layout.expr_dims > 0) {
    const Eigen::VectorXd psi = theta.segment(layout.expr_offset(), layout.expr_dims);
    const Eigen::VectorXd delta = model.expression_basis * psi;
    for (int v = 0; v < V; ++v) verts.row(v) += delta.segment<3>(3 * v).transpose();
  }
  return verts;
}

Eigen::MatrixXd lbs_vertices(const KinematicModel& model, const ParamLayout& layout,
                             const Eigen::VectorXd& theta, const FkResult& fk) {
  const Eigen::MatrixXd rest_verts = shaped_vertices(model, layout, theta);
  const int V = model.num_vertices();
  const int J = model.num_joints();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(V, 3);
  for (int v = 0; v < V; ++v) {
    const Vec3 x = rest_verts.row(v).transpose();
    Vec3 acc = Vec3::Zero();
    for (int j = 0; j < J; ++j) {
      const double w = model.skinning(v, j);
      if (w == 0.0) continue;
      const Vec3 local = x - fk.rest.row(j).transpose();
      acc += w * (fk.world[j].R * local + fk.world[j].t);
    }
    out.row(v) = acc.transpose();
  }
  return out;
}

Eigen::MatrixXd lbs_vertices(const KinematicModel& model, const ParamLayout& layout,
                             const Eigen::VectorXd& theta) {
  return lbs_vertices(model, layout, theta, forward_kinematics(model, layout, theta));
}

Eigen::MatrixXd landmarks(const KinematicModel& model, const ParamLayout& layout,
                          const Eigen::VectorXd& theta) {
  const Eigen::MatrixXd verts = lbs_vertices(model, layout, theta);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(model.landmark_indices.size()), 3);
  for (std::size_t i = 0; i < model.landmark_indices.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = verts.row(model.landmark_indices[i]);
  return out;
}

Eigen::MatrixXd joint_positions(const FkResult& fk) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(fk.world.size()), 3);
  for (std::size_t j = 0; j < fk.world.size(); ++j)
    out.row(static_cast<Eigen::Index>(j)) = fk.world[j].t.transpose();
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic model generator
// ---------------------------------------------------------------------------

namespace {

struct Segment {
  Vec3 a, b;
  double length() const { return (b - a).norm(); }
};

double point_segment_distance(const Vec3& p, const Segment& s) {
  const Vec3 d = s.b - s.a;
  const double len2 = d.squaredNorm();
  if (len2 < 1e-18) return (p - s.a).norm();
  const double t = std::clamp((p - s.a).dot(d) / len2, 0.0, 1.0);
  return (p - (s.a + t * d)).norm();
}

Vec3 perpendicular(const Vec3& d) {
  const Vec3 ref = std::abs(d.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  return d.cross(ref).normalized();
}

struct TreeSpec {
  std::vector<int> parents;
  Eigen::MatrixXd joints;         // J x 3 rest positions
  std::vector<Segment> segments;  // influence segment per joint
  int head_joint = -1, wrist_left = -1, wrist_right = -1;
};

TreeSpec body_tree() {
  TreeSpec t;
  t.parents = {-1, 0, 1, 2, 1, 4, 5, 1, 7, 8, 0, 10, 11, 0, 13, 14};
  // Limbs carry slight anatomical bends; collinear chains would make
  // bone-axis twist unobservable from joint positions alone.
  t.joints.resize(16, 3);
  t.joints << 0.00, 0.95, 0.00,   // 0 pelvis
      0.00, 1.15, -0.02,          // 1 spine
      0.00, 1.45, 0.00,           // 2 neck
      0.00, 1.60, -0.02,          // 3 head
      0.18, 1.40, 0.00,           // 4 L shoulder
      0.44, 1.37, -0.05,          // 5 L elbow
      0.68, 1.42, -0.12,          // 6 L wrist
      -0.18, 1.40, 0.00,          // 7 R shoulder
      -0.44, 1.37, -0.05,         // 8 R elbow
      -0.68, 1.42, -0.12,         // 9 R wrist
      0.10, 0.90, 0.00,           // 10 L hip
      0.11, 0.50, -0.05,          // 11 L knee
      0.12, 0.10, 0.00,           // 12 L ankle
      -0.10, 0.90, 0.00,          // 13 R hip
      -0.11, 0.50, -0.05,         // 14 R knee
      -0.12, 0.10, 0.00;          // 15 R ankle
  auto seg = [&](int a, int b) {
    return Segment{t.joints.row(a).transpose(), t.joints.row(b).transpose()};
  };
  auto ext = [&](int a, const Vec3& offset) {
    const Vec3 p = t.joints.row(a).transpose();
    return Segment{p, p + offset};
  };
  t.segments = {
      seg(0, 1), seg(1, 2), seg(2, 3), ext(3, {0.0, 0.16, 0.0}),
      seg(4, 5), seg(5, 6), ext(6, {0.16, 0.0, 0.0}),
      seg(7, 8), seg(8, 9), ext(9, {-0.16, 0.0, 0.0}),
      seg(10, 11), seg(11, 12), ext(12, {0.0, -0.04, -0.12}),
      seg(13, 14), seg(14, 15), ext(15, {0.0, -0.04, -0.12})};
  t.head_joint = 3;
  t.wrist_left = 6;
  t.wrist_right = 9;
  return t;
}

TreeSpec chain_tree(int joints) {
  TreeSpec t;
  t.parents.resize(joints);
  t.joints.resize(joints, 3);
  for (int j = 0; j < joints; ++j) {
    t.parents[j] = j - 1;
    t.joints.row(j) << 0.0, 0.2 * j, 0.0;
  }
  for (int j = 0; j < joints; ++j) {
    const Vec3 a = t.joints.row(j).transpose();
    const Vec3 b = (j + 1 < joints) ? Vec3(t.joints.row(j + 1).transpose())
                                    : Vec3(a + Vec3(0.0, 0.2, 0.0));
    t.segments.push_back({a, b});
  }
  t.head_joint = joints - 1;
  return t;
}

TreeSpec face_tree() {
  TreeSpec t;
  t.parents = {-1, 0, 1, 1};
  t.joints.resize(4, 3);
  t.joints << 0.000, -0.090, 0.455,  // 0 neck (root)
      0.000, 0.000, 0.450,           // 1 head
      0.033, 0.030, 0.375,           // 2 L eye
      -0.033, 0.030, 0.375;          // 3 R eye
  auto p = [&](int j) { return Vec3(t.joints.row(j).transpose()); };
  t.segments = {{p(0), p(1)},
                {p(1), p(1) + Vec3(0.0, 0.07, 0.0)},
                {p(2), p(2) + Vec3(0.0, 0.0, -0.012)},
                {p(3), p(3) + Vec3(0.0, 0.0, -0.012)}};
  t.head_joint = 1;
  return t;
}

// Largest-remainder allocation of `total` vertices over segment lengths,
// keeping at least `min_each` per segment.
std::vector<int> allocate_counts(const std::vector<Segment>& segs, int total, int min_each) {
  const int n = static_cast<int>(segs.size());
  if (total < n * min_each) throw BadConfig("too few vertices for the joint tree");
  std::vector<double> len(n);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    len[i] = std::max(segs[i].length(), 0.02);
    sum += len[i];
  }
  std::vector<int> counts(n);
  std::vector<std::pair<double, int>> fractional(n);
  int used = 0;
  for (int i = 0; i < n; ++i) {
    const double want = total * len[i] / sum;
    counts[i] = std::max(min_each, static_cast<int>(std::floor(want)));
    fractional[i] = {want - std::floor(want), i};
    used += counts[i];
  }
  std::sort(fractional.begin(), fractional.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  int idx = 0;
  while (used < total) {
    counts[fractional[idx % n].second]++;
    used++;
    idx++;
  }
  // Trim overshoot from the largest allocations.
  while (used > total) {
    int big = 0;
    for (int i = 1; i < n; ++i)
      if (counts[i] > counts[big]) big = i;
    if (counts[big] <= min_each) throw BadConfig("cannot satisfy vertex budget");
    counts[big]--;
    used--;
  }
  return counts;
}

void assign_skinning(KinematicModel& model, const std::vector<Segment>& segs,
                     int support) {
  const int V = model.num_vertices();
  const int J = model.num_joints();
  const int keep = std::min(support, J);
  model.skinning = Eigen::MatrixXd::Zero(V, J);
  std::vector<std::pair<double, int>> weights(J);
  for (int v = 0; v < V; ++v) {
    const Vec3 p = model.template_vertices.row(v).transpose();
    for (int j = 0; j < J; ++j) {
      const double d = point_segment_distance(p, segs[j]);
      weights[j] = {1.0 / (d * d + 1e-4), j};
    }
    std::sort(weights.begin(), weights.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    double sum = 0.0;
    for (int k = 0; k < keep; ++k) sum += weights[k].first;
    for (int k = 0; k < keep; ++k)
      model.skinning(v, weights[k].second) = weights[k].first / sum;
  }
}

std::vector<int> dominant_joint_vertices(const KinematicModel& model, int joint) {
  std::vector<int> out;
  for (int v = 0; v < model.num_vertices(); ++v) {
    int best = 0;
    model.skinning.row(v).maxCoeff(&best);
    if (best == joint) out.push_back(v);
  }
  return out;
}

void build_limb_mesh(KinematicModel& model, const TreeSpec& tree,
                     const SynthModelConfig& config, Rng& rng) {
  const int ring_size = 4;
  const std::vector<int> counts =
      allocate_counts(tree.segments, config.vertices, ring_size);
  model.template_vertices.resize(config.vertices, 3);
  std::vector<std::pair<int, int>> edge_list;
  std::vector<std::vector<int>> bone_vertices(tree.segments.size());

  int next = 0;
  for (std::size_t j = 0; j < tree.segments.size(); ++j) {
    const Segment& s = tree.segments[j];
    const Vec3 axis = (s.b - s.a).normalized();
    const Vec3 u = perpendicular(axis);
    const Vec3 w = axis.cross(u);
    const int n = counts[j];
    const int rings = std::max(1, n / ring_size);
    int made = 0;
    std::vector<int> prev_ring;
    for (int r = 0; r < rings && made < n; ++r) {
      const int this_ring = (r == rings - 1) ? (n - made) : ring_size;
      const double t = (r + 0.5) / rings;
      const Vec3 center = s.a + t * (s.b - s.a);
      std::vector<int> ring;
      for (int k = 0; k < this_ring; ++k) {
        const double phi = 2.0 * M_PI * k / this_ring + 0.15 * rng.uniform();
        const double rad = config.limb_radius * (1.0 + 0.15 * (rng.uniform() - 0.5));
        model.template_vertices.row(next) =
            (center + rad * (std::cos(phi) * u + std::sin(phi) * w)).transpose();
        ring.push_back(next);
        bone_vertices[j].push_back(next);
        ++next;
        ++made;
      }
      for (std::size_t k = 0; k < ring.size(); ++k) {
        if (ring.size() > 1)
          edge_list.emplace_back(ring[k], ring[(k + 1) % ring.size()]);
        if (k < prev_ring.size()) edge_list.emplace_back(prev_ring[k], ring[k]);
      }
      prev_ring = ring;
    }
  }

  model.edges.resize(static_cast<Eigen::Index>(edge_list.size()), 2);
  for (std::size_t e = 0; e < edge_list.size(); ++e) {
    model.edges(static_cast<Eigen::Index>(e), 0) = edge_list[e].first;
    model.edges(static_cast<Eigen::Index>(e), 1) = edge_list[e].second;
  }

  // Fingertips: the five wrist-bone vertices closest to the hand segment end.
  auto pick_tips = [&](int wrist) {
    std::vector<int> result;
    if (wrist < 0) return result;
    const Vec3 tip = tree.segments[wrist].b;
    std::vector<std::pair<double, int>> order;
    for (int v : bone_vertices[wrist])
      order.emplace_back((Vec3(model.template_vertices.row(v).transpose()) - tip).norm(), v);
    std::sort(order.begin(), order.end());
    for (int i = 0; i < 5 && i < static_cast<int>(order.size()); ++i)
      result.push_back(order[i].second);
    std::sort(result.begin(), result.end());
    return result;
  };
  model.fingertip_left = pick_tips(tree.wrist_left);
  model.fingertip_right = pick_tips(tree.wrist_right);
}

void build_face_mesh(KinematicModel& model, const TreeSpec& tree,
                     const SynthModelConfig& config, Rng& rng) {
  const int V = config.vertices;
  const Vec3 center = tree.joints.row(tree.head_joint).transpose();
  const Vec3 semi(0.080, 0.110, 0.090);
  model.template_vertices.resize(V, 3);
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < V; ++i) {
    const double y = 1.0 - 2.0 * (i + 0.5) / V;
    const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
    const double phi = golden * i;
    Vec3 p(r * std::cos(phi) * semi.x(), y * semi.y(), r * std::sin(phi) * semi.z());
    p += 0.002 * Vec3(rng.normal(), rng.normal(), rng.normal());
    model.template_vertices.row(i) = (center + p).transpose();
  }
  // Spiral lattice edges.
  std::vector<std::pair<int, int>> edge_list;
  for (int i = 0; i + 1 < V; ++i) edge_list.emplace_back(i, i + 1);
  for (int i = 0; i + 8 < V; ++i) edge_list.emplace_back(i, i + 8);
  model.edges.resize(static_cast<Eigen::Index>(edge_list.size()), 2);
  for (std::size_t e = 0; e < edge_list.size(); ++e) {
    model.edges(static_cast<Eigen::Index>(e), 0) = edge_list[e].first;
    model.edges(static_cast<Eigen::Index>(e), 1) = edge_list[e].second;
  }
  // Landmarks: evenly strided subset of the camera-facing (-z) hemisphere.
  std::vector<int> front;
  for (int i = 0; i < V; ++i)
    if (model.template_vertices(i, 2) - center.z() < -0.25 * semi.z()) front.push_back(i);
  const int want = std::min(config.landmarks, static_cast<int>(front.size()));
  if (want > 0) {
    const double stride = static_cast<double>(front.size()) / want;
    for (int k = 0; k < want; ++k)
      model.landmark_indices.push_back(front[static_cast<int>(k * stride)]);
  }
}

Eigen::MatrixXd bump_basis(const KinematicModel& model, int dims, double amplitude,
                           const Vec3& center, Rng& rng, bool radial_scale_first) {
  const int V = model.num_vertices();
  Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(3 * V, dims);
  for (int d = 0; d < dims; ++d) {
    if (radial_scale_first && d == 0) {
      for (int v = 0; v < V; ++v)
        basis.block<3, 1>(3 * v, d) =
            0.05 * (Vec3(model.template_vertices.row(v).transpose()) - center);
      continue;
    }
    const int anchor = rng.uniform_int(0, V - 1);
    const Vec3 site = model.template_vertices.row(anchor).transpose();
    Vec3 dir(rng.normal(), rng.normal(), rng.normal());
    dir.normalize();
    const double sigma = 0.05 + 0.05 * rng.uniform();
    for (int v = 0; v < V; ++v) {
      const double dist2 =
          (Vec3(model.template_vertices.row(v).transpose()) - site).squaredNorm();
      basis.block<3, 1>(3 * v, d) =
          amplitude * std::exp(-dist2 / (2.0 * sigma * sigma)) * dir;
    }
  }
  return basis;
}

}  // namespace

SynthModelConfig default_body_config() {
  SynthModelConfig c;
  c.tree = SynthTree::Body;
  c.vertices = 800;
  c.shape_dims = 8;
  return c;
}

SynthModelConfig default_face_config() {
  SynthModelConfig c;
  c.tree = SynthTree::Face;
  c.vertices = 600;
  c.shape_dims = 16;
  c.expr_dims = 16;
  c.landmarks = 64;
  return c;
}

KinematicModel synth_model(const SynthModelConfig& config, std::uint64_t seed) {
  if (config.vertices < 8) throw BadConfig("synth model needs at least 8 vertices");
  if (config.shape_dims < 0 || config.expr_dims < 0 || config.landmarks < 0)
    throw BadConfig("negative dimension in synth model config");
  if (config.tree == SynthTree::Chain && config.joints < 1)
    throw BadConfig("chain tree needs at least 1 joint");

  Rng rng(seed);
  TreeSpec tree;
  switch (config.tree) {
    case SynthTree::Body: tree = body_tree(); break;
    case SynthTree::Face: tree = face_tree(); break;
    case SynthTree::Chain: tree = chain_tree(config.joints); break;
  }

  KinematicModel model;
  model.parents = tree.parents;
  model.rest_joint_mean = tree.joints;
  model.head_joint = tree.head_joint;
  model.wrist_left = tree.wrist_left;
  model.wrist_right = tree.wrist_right;

  if (config.tree == SynthTree::Face)
    build_face_mesh(model, tree, config, rng);
  else
    build_limb_mesh(model, tree, config, rng);

  assign_skinning(model, tree.segments, config.skinning_support);

  const int J = model.num_joints();
  const Vec3 root = tree.joints.row(0).transpose();
  if (config.shape_dims > 0) {
    model.rest_joint_basis = Eigen::MatrixXd::Zero(3 * J, config.shape_dims);
    if (config.tree != SynthTree::Face) {
      for (int j = 0; j < J; ++j)
        model.rest_joint_basis.block<3, 1>(3 * j, 0) =
            0.05 * (Vec3(tree.joints.row(j).transpose()) - root);
      for (int d = 1; d < config.shape_dims; ++d)
        for (int j = 1; j < J; ++j)
          model.rest_joint_basis.block<3, 1>(3 * j, d) =
              0.015 * Vec3(rng.normal(), rng.normal(), rng.normal());
    }
    if (config.tree == SynthTree::Face) {
      const Vec3 center = tree.joints.row(tree.head_joint).transpose();
      model.shape_basis = bump_basis(model, config.shape_dims, 0.006, center, rng, true);
    } else {
      // Vertices follow their joints under shape change, plus local detail.
      const int V = model.num_vertices();
      model.shape_basis = Eigen::MatrixXd::Zero(3 * V, config.shape_dims);
      for (int d = 0; d < config.shape_dims; ++d) {
        for (int v = 0; v < V; ++v) {
          Vec3 disp = Vec3::Zero();
          for (int j = 0; j < J; ++j) {
            const double w = model.skinning(v, j);
            if (w > 0.0) disp += w * model.rest_joint_basis.block<3, 1>(3 * j, d);
          }
          disp += 0.002 * Vec3(rng.normal(), rng.normal(), rng.normal());
          model.shape_basis.block<3, 1>(3 * v, d) = disp;
        }
      }
    }
  }
  if (config.expr_dims > 0) {
    const Vec3 center = tree.joints.row(tree.head_joint).transpose();
    model.expression_basis =
        bump_basis(model, config.expr_dims, 0.010, center, rng, false);
  }

  if (config.tree == SynthTree::Body) {
    model.part_head = dominant_joint_vertices(model, tree.head_joint);
    model.part_left_hand = dominant_joint_vertices(model, tree.wrist_left);
    model.part_right_hand = dominant_joint_vertices(model, tree.wrist_right);
  } else if (config.tree == SynthTree::Face) {
    model.part_head = dominant_joint_vertices(model, tree.head_joint);
  }

  model.validate();
  return model;
}

// ---------------------------------------------------------------------------
// Model IO
// ---------------------------------------------------------------------------

namespace {

std::vector<std::int64_t> to_i64(const std::vector<int>& v) {
  return std::vector<std::int64_t>(v.begin(), v.end());
}

std::vector<int> to_i32(const std::vector<std::int64_t>& v) {
  return std::vector<int>(v.begin(), v.end());
}

}  // namespace

void save_model(const KinematicModel& model, const std::string& path) {
  Container c;
  c.put_ints("meta", {1, static_cast<std::int64_t>(model.config_hash),
                      model.head_joint, model.wrist_left, model.wrist_right});
  c.put_matrix("template", model.template_vertices);
  c.put_ints("parents", to_i64(model.parents));
  c.put_matrix("rest_joint_mean", model.rest_joint_mean);
  c.put_matrix("rest_joint_basis", model.rest_joint_basis);
  c.put_matrix("skinning", model.skinning);
  c.put_matrix("shape_basis", model.shape_basis);
  c.put_matrix("expression_basis", model.expression_basis);
  std::vector<std::int64_t> edges;
  edges.reserve(static_cast<std::size_t>(model.edges.size()));
  for (Eigen::Index e = 0; e < model.edges.rows(); ++e) {
    edges.push_back(model.edges(e, 0));
    edges.push_back(model.edges(e, 1));
  }
  c.put_ints("edges", edges);
  c.put_ints("landmarks", to_i64(model.landmark_indices));
  c.put_ints("fingertip_left", to_i64(model.fingertip_left));
  c.put_ints("fingertip_right", to_i64(model.fingertip_right));
  c.put_ints("part_head", to_i64(model.part_head));
  c.put_ints("part_left_hand", to_i64(model.part_left_hand));
  c.put_ints("part_right_hand", to_i64(model.part_right_hand));
  c.save(path);
}

KinematicModel load_model(const std::string& path) {
  const Container c = Container::load(path);
  const auto meta = c.get_ints("meta");
  if (meta.size() != 5 || meta[0] != 1)
    throw FormatError("unsupported model record version");
  KinematicModel model;
  model.config_hash = static_cast<std::uint64_t>(meta[1]);
  model.head_joint = static_cast<int>(meta[2]);
  model.wrist_left = static_cast<int>(meta[3]);
  model.wrist_right = static_cast<int>(meta[4]);
  model.template_vertices = c.get_matrix("template");
  model.parents = to_i32(c.get_ints("parents"));
  model.rest_joint_mean = c.get_matrix("rest_joint_mean");
  model.rest_joint_basis = c.get_matrix("rest_joint_basis");
  model.skinning = c.get_matrix("skinning");
  model.shape_basis = c.get_matrix("shape_basis");
  model.expression_basis = c.get_matrix("expression_basis");
  const auto edges = c.get_ints("edges");
  model.edges.resize(static_cast<Eigen::Index>(edges.size() / 2), 2);
  for (Eigen::Index e = 0; e < model.edges.rows(); ++e) {
    model.edges(e, 0) = static_cast<int>(edges[static_cast<std::size_t>(2 * e)]);
    model.edges(e, 1) = static_cast<int>(edges[static_cast<std::size_t>(2 * e + 1)]);
  }
  model.landmark_indices = to_i32(c.get_ints("landmarks"));
  model.fingertip_left = to_i32(c.get_ints("fingertip_left"));
  model.fingertip_right = to_i32(c.get_ints("fingertip_right"));
  model.part_head = to_i32(c.get_ints("part_head"));
  model.part_left_hand = to_i32(c.get_ints("part_left_hand"));
  model.part_right_hand = to_i32(c.get_ints("part_right_hand"));
  model.validate();
  return model;
}

}  // namespace mofit
