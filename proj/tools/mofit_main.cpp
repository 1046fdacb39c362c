// Command line surface: model/data synthesis, training, fitting, evaluation,
// ablations and layout documentation.

#include <CLI11.hpp>
#include <cinttypes>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "mofit/errors.hpp"
#include "mofit/pipeline.hpp"

namespace {

using namespace mofit;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;  // section.key=value
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Configuration file");
  cmd->add_option("--set", args.overrides,
                  "Override a config value as section.key=value");
}

Config build_config(const CommonArgs& args) {
  Config cfg;
  if (!args.config_path.empty()) cfg.load_file(args.config_path);
  for (const std::string& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw BadConfig("--set expects section.key=value, got: " + kv);
    cfg.apply_override(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

Eigen::VectorXd reference_pose(const KinematicModel& model, Task task) {
  const ParamLayout layout = model.layout(task);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(layout.size());
  for (int j = 0; j < layout.joints; ++j) {
    theta[layout.rot_offset(j) + 0] = 1.0;
    theta[layout.rot_offset(j) + 4] = 1.0;
  }
  if (layout.has_camera()) {
    theta[layout.camera_offset()] = 200.0;
    theta[layout.camera_offset() + 1] = 256.0;
    theta[layout.camera_offset() + 2] = 256.0;
  }
  if (task == Task::Hmd) {
    // Rest pose standing on the ground plane.
    const double min_y = lbs_vertices(model, layout, theta).col(1).minCoeff();
    theta[layout.translation_offset() + 1] = -min_y;
  }
  return theta;
}

void check_hashes(std::uint64_t a, std::uint64_t b, const char* what, bool force) {
  if (a == 0 || b == 0 || a == b) return;
  if (force) {
    std::cerr << "warning: config hash mismatch (" << what << "), continuing\n";
    return;
  }
  throw BadConfig(std::string("config hash mismatch between artifacts (") + what +
                  "); pass --force to override");
}

int run(int argc, char** argv) {
  CLI::App app{"Morphable-model fitting: classic and learned solvers"};
  app.require_subcommand(1);

  // ---- synth-model ----
  auto* synth_model_cmd = app.add_subcommand("synth-model", "Generate a model file");
  CommonArgs sm_args;
  std::string sm_out;
  add_common(synth_model_cmd, sm_args);
  synth_model_cmd->add_option("--out", sm_out, "Output model path")->required();

  // ---- synth-data ----
  auto* synth_data_cmd = app.add_subcommand("synth-data", "Generate a dataset");
  CommonArgs sd_args;
  std::string sd_model, sd_out, sd_task, sd_visibility;
  int sd_count = -1, sd_workers = -1;
  double sd_noise = -1.0;
  std::uint64_t sd_seed = 0;
  bool sd_has_seed = false;
  add_common(synth_data_cmd, sd_args);
  synth_data_cmd->add_option("--model", sd_model, "Model file")->required();
  synth_data_cmd->add_option("--out", sd_out, "Output dataset path")->required();
  synth_data_cmd->add_option("--task", sd_task, "body2d | hmd | face");
  synth_data_cmd->add_option("--count", sd_count, "Record count");
  synth_data_cmd->add_option("--noise", sd_noise,
                             "Observation noise (pixels for 2D tasks; scales the"
                             " HMD position/rotation noise)");
  synth_data_cmd->add_option("--visibility", sd_visibility, "full | half");
  synth_data_cmd->add_option("--seed", sd_seed, "Master seed")
      ->each([&](const std::string&) { sd_has_seed = true; });
  synth_data_cmd->add_option("--workers", sd_workers, "Worker threads");

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "Train the learned fitter");
  CommonArgs tr_args;
  std::string tr_model, tr_data, tr_out, tr_history;
  int tr_epochs = -1, tr_workers = -1;
  add_common(train_cmd, tr_args);
  train_cmd->add_option("--model", tr_model, "Model file")->required();
  train_cmd->add_option("--data", tr_data, "Dataset file")->required();
  train_cmd->add_option("--out", tr_out, "Output checkpoint path")->required();
  train_cmd->add_option("--history", tr_history, "Training history CSV");
  train_cmd->add_option("--epochs", tr_epochs, "Override train.epochs");
  train_cmd->add_option("--workers", tr_workers, "Override train.workers");

  // ---- fit ----
  auto* fit_cmd = app.add_subcommand("fit", "Fit records and write a trajectory");
  CommonArgs ft_args;
  std::string ft_model, ft_data, ft_solver = "learned", ft_checkpoint, ft_out;
  int ft_index = 0;
  add_common(fit_cmd, ft_args);
  fit_cmd->add_option("--model", ft_model, "Model file")->required();
  fit_cmd->add_option("--data", ft_data, "Dataset file")->required();
  fit_cmd->add_option("--solver", ft_solver, "lm | gd | learned");
  fit_cmd->add_option("--checkpoint", ft_checkpoint, "Checkpoint (learned solver)");
  fit_cmd->add_option("--index", ft_index, "Record index to fit");
  fit_cmd->add_option("--out", ft_out, "Trajectory CSV path")->required();

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a solver on the test split");
  CommonArgs ev_args;
  std::string ev_model, ev_data, ev_solver = "learned", ev_checkpoint, ev_report,
              ev_per_iter;
  int ev_workers = -1, ev_iterations = -1;
  bool ev_force = false;
  add_common(eval_cmd, ev_args);
  eval_cmd->add_option("--model", ev_model, "Model file")->required();
  eval_cmd->add_option("--data", ev_data, "Dataset file")->required();
  eval_cmd->add_option("--solver", ev_solver, "lm | gd | learned");
  eval_cmd->add_option("--checkpoint", ev_checkpoint, "Checkpoint (learned solver)");
  eval_cmd->add_option("--report", ev_report, "EvalReport CSV path")->required();
  eval_cmd->add_option("--per-iter", ev_per_iter, "Per-iteration CSV (learned)");
  eval_cmd->add_option("--iterations", ev_iterations, "Fitter iterations");
  eval_cmd->add_option("--workers", ev_workers, "Worker threads");
  eval_cmd->add_flag("--force", ev_force, "Ignore config hash mismatches");

  // ---- ablate ----
  auto* ablate_cmd =
      app.add_subcommand("ablate", "Train/evaluate a cross-product of config axes");
  CommonArgs ab_args;
  std::string ab_model, ab_data, ab_out_dir;
  std::vector<std::string> ab_axes;
  add_common(ablate_cmd, ab_args);
  ablate_cmd->add_option("--model", ab_model, "Model file")->required();
  ablate_cmd->add_option("--data", ab_data, "Dataset file")->required();
  ablate_cmd->add_option("--out-dir", ab_out_dir, "Output directory")->required();
  ablate_cmd
      ->add_option("--axis", ab_axes,
                   "Config axis as section.key=value1,value2 (repeatable)")
      ->required();

  // ---- plot-curves ----
  auto* plot_cmd =
      app.add_subcommand("plot-curves", "Convert per-iteration CSVs to long format");
  std::vector<std::string> pc_inputs;
  std::string pc_out;
  plot_cmd->add_option("--in", pc_inputs, "Per-iteration CSV inputs")->required();
  plot_cmd->add_option("--out", pc_out, "Long-format CSV output")->required();

  // ---- describe-layout ----
  auto* describe_cmd =
      app.add_subcommand("describe-layout", "Print parameter/residual layouts");
  CommonArgs dl_args;
  std::string dl_model, dl_task;
  add_common(describe_cmd, dl_args);
  describe_cmd->add_option("--model", dl_model, "Model file (default: synthesized)");
  describe_cmd->add_option("--task", dl_task, "body2d | hmd | face");

  // ---- default-config ----
  auto* defcfg_cmd = app.add_subcommand("default-config",
                                        "Write the annotated default configuration");
  std::string dc_out;
  defcfg_cmd->add_option("--out", dc_out, "Output path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the message and usage hint to stderr
    return 1;
  }

  if (synth_model_cmd->parsed()) {
    const Config cfg = build_config(sm_args);
    const KinematicModel model = model_from_config(cfg);
    save_model(model, sm_out);
    std::cout << "model: " << model.num_vertices() << " vertices, "
              << model.num_joints() << " joints -> " << sm_out << "\n";
    return 0;
  }

  if (synth_data_cmd->parsed()) {
    Config cfg = build_config(sd_args);
    if (!sd_task.empty()) cfg.set("task.name", sd_task);
    if (!sd_visibility.empty()) cfg.set("task.visibility", sd_visibility);
    if (sd_count > 0) cfg.set("data.count", std::to_string(sd_count));
    if (sd_has_seed) cfg.set("data.seed", std::to_string(sd_seed));
    if (sd_noise >= 0.0) {
      cfg.set("data.noise_2d", std::to_string(sd_noise));
      cfg.set("data.noise_position", std::to_string(0.005 * sd_noise));
      cfg.set("data.noise_rotation", std::to_string(0.01 * sd_noise));
    }
    const KinematicModel model = load_model(sd_model);
    Dataset ds = generate_dataset(
        model, datagen_from_config(cfg), cfg.get_int("data.count"),
        cfg.get_double("data.train_frac"), cfg.get_double("data.val_frac"),
        cfg.get_u64("data.seed"), sd_workers > 0 ? sd_workers : 1);
    ds.config_hash = cfg.hash_sections({"task", "model", "data"});
    ds.model_hash = model.config_hash;
    write_dataset(ds, model, sd_out);
    std::cout << "dataset: " << ds.records.size() << " records ("
              << ds.indices_of(Split::Train).size() << " train, "
              << ds.indices_of(Split::Val).size() << " val, "
              << ds.indices_of(Split::Test).size() << " test) -> " << sd_out << "\n";
    return 0;
  }

  if (train_cmd->parsed()) {
    Config cfg = build_config(tr_args);
    if (tr_epochs >= 0) cfg.set("train.epochs", std::to_string(tr_epochs));
    if (tr_workers > 0) cfg.set("train.workers", std::to_string(tr_workers));
    const KinematicModel model = load_model(tr_model);
    const Dataset ds = read_dataset(tr_data, model);
    cfg.set("task.name", task_name(ds.task));

    FitterNetworks nets;
    nets.build(fitter_from_config(cfg, model));
    nets.init_weights(cfg.get_u64("fitter.seed"),
                      reference_pose(model, ds.task));
    nets.config_hash = cfg.hash();
    nets.data_hash = ds.config_hash;

    const TrainConfig tc = train_from_config(cfg);
    const TrainResult result = train_fitter(nets, model, to_samples(ds, Split::Train),
                                            to_samples(ds, Split::Val), tc);
    save_checkpoint(nets, tr_out,
                    result.best_epoch > 0 ? result.best_epoch : tc.epochs);
    if (!tr_history.empty())
      write_history_csv(tr_history, result.history, cfg.hash());
    std::cout << "trained " << tc.epochs << " epochs; best val loss "
              << result.best_val_loss << " at epoch " << result.best_epoch << " -> "
              << tr_out << "\n";
    return 0;
  }

  if (fit_cmd->parsed()) {
    const Config cfg = build_config(ft_args);
    const KinematicModel model = load_model(ft_model);
    const Dataset ds = read_dataset(ft_data, model);
    if (ft_index < 0 || ft_index >= static_cast<int>(ds.records.size()))
      throw BadConfig("record index out of range");
    const DatasetRecord& rec = ds.records[static_cast<std::size_t>(ft_index)];

    if (ft_solver == "lm" || ft_solver == "gd") {
      Config task_cfg = cfg;
      task_cfg.set("task.name", task_name(ds.task));
      BaselineEnergyOptions energy;
      GaussianMixture gmm;
      if (ds.task == Task::Face) {
        energy.reg_weights = Eigen::VectorXd::Constant(
            model.layout(ds.task).size(), cfg.get_double("baseline.face_reg"));
      } else {
        energy.weight_gravity = cfg.get_double("baseline.weight_gravity");
        if (cfg.get_double("baseline.weight_gmm") > 0.0) {
          gmm = pose_prior_from_dataset(model, ds, cfg);
          energy.weight_gmm = cfg.get_double("baseline.weight_gmm");
          energy.pose_gmm = &gmm;
        }
      }
      const Eigen::VectorXd init = classic_init(model, rec.obs, task_cfg);
      FitTrace trace;
      if (ft_solver == "lm")
        trace = lm_fit(model, rec.obs, init, energy, lm_options_from_config(cfg));
      else
        trace = gd_fit(model, rec.obs, init, energy,
                       cfg.get_double("baseline.gd_step"),
                       cfg.get_int("baseline.gd_iters"));
      write_fit_trace_csv(ft_out, trace, cfg.hash());
      const double final_data =
          task_residuals(model, trace.final_params, rec.obs, false).data_term();
      std::cout << "solver=" << ft_solver << " record=" << ft_index
                << " iterations=" << trace.rows.back().iter
                << " final_energy=" << trace.rows.back().energy
                << " final_data_term=" << final_data << "\n";
    } else if (ft_solver == "learned") {
      if (ft_checkpoint.empty())
        throw BadConfig("--checkpoint is required for the learned solver");
      Checkpoint ckpt = load_checkpoint(ft_checkpoint);
      const FitterTrajectory traj =
          run_fitter(ckpt.nets, model, {{rec.obs, rec.gt_params}},
                     ckpt.nets.config.iterations);
      write_fitter_diag_csv(ft_out, traj, ckpt.nets.config_hash);
      const double final_data = task_residuals(
          model, traj.thetas.back().row(0).transpose(), rec.obs, false)
          .data_term();
      std::cout << "solver=learned record=" << ft_index
                << " iterations=" << traj.steps.size()
                << " final_data_term=" << final_data << "\n";
    } else {
      throw BadConfig("unknown solver: " + ft_solver);
    }
    return 0;
  }

  if (eval_cmd->parsed()) {
    const Config cfg = build_config(ev_args);
    const KinematicModel model = load_model(ev_model);
    const Dataset ds = read_dataset(ev_data, model);
    const int workers = ev_workers > 0 ? ev_workers : cfg.get_int("eval.workers");

    EvalReport report;
    std::uint64_t hash = ds.config_hash;
    if (ev_solver == "learned") {
      if (ev_checkpoint.empty())
        throw BadConfig("--checkpoint is required for the learned solver");
      Checkpoint ckpt = load_checkpoint(ev_checkpoint);
      check_hashes(ckpt.nets.data_hash, ds.config_hash, "checkpoint vs dataset",
                   ev_force);
      check_hashes(ds.model_hash, model.config_hash, "dataset vs model", ev_force);
      hash = ckpt.nets.config_hash;
      const int iters =
          ev_iterations >= 0 ? ev_iterations : ckpt.nets.config.iterations;
      Eigen::MatrixXd per_iter;
      std::vector<std::string> per_iter_cols;
      report = evaluate_learned(model, ds, Split::Test, ckpt.nets, iters, workers,
                                &per_iter, &per_iter_cols);
      if (!ev_per_iter.empty())
        write_csv(ev_per_iter, per_iter_cols, per_iter, hash);
    } else if (ev_solver == "lm" || ev_solver == "gd") {
      Config task_cfg = cfg;
      task_cfg.set("task.name", task_name(ds.task));
      GaussianMixture gmm;
      const GaussianMixture* gmm_ptr = nullptr;
      if (ds.task != Task::Face && cfg.get_double("baseline.weight_gmm") > 0.0) {
        gmm = pose_prior_from_dataset(model, ds, cfg);
        gmm_ptr = &gmm;
      }
      report = evaluate_classic(model, ds, Split::Test,
                                ev_solver == "lm" ? ClassicSolver::Lm
                                                  : ClassicSolver::Gd,
                                task_cfg, gmm_ptr, workers);
    } else {
      throw BadConfig("unknown solver: " + ev_solver);
    }
    write_csv(ev_report, report.columns, report.values, hash, true);
    const Eigen::VectorXd mean = report.mean();
    std::cout << "eval (" << report.values.rows() << " instances):";
    for (std::size_t c = 1; c < report.columns.size(); ++c)
      std::cout << " " << report.columns[c] << "="
                << mean[static_cast<Eigen::Index>(c)];
    std::cout << "\n";
    return 0;
  }

  if (ablate_cmd->parsed()) {
    const Config base_cfg = build_config(ab_args);
    const KinematicModel model = load_model(ab_model);
    const Dataset ds = read_dataset(ab_data, model);
    std::filesystem::create_directories(ab_out_dir);

    // Parse axes: section.key=v1,v2,...
    struct Axis {
      std::string key;
      std::vector<std::string> values;
    };
    std::vector<Axis> axes;
    for (const std::string& spec : ab_axes) {
      const auto eq = spec.find('=');
      if (eq == std::string::npos)
        throw BadConfig("--axis expects section.key=v1,v2 got: " + spec);
      Axis axis;
      axis.key = spec.substr(0, eq);
      std::string rest = spec.substr(eq + 1);
      std::size_t at = 0;
      while (at != std::string::npos) {
        const auto comma = rest.find(',', at);
        axis.values.push_back(rest.substr(
            at, comma == std::string::npos ? std::string::npos : comma - at));
        at = comma == std::string::npos ? std::string::npos : comma + 1;
      }
      axes.push_back(axis);
    }

    std::vector<std::size_t> counter(axes.size(), 0);
    std::vector<std::string> summary_cols;
    for (const auto& axis : axes) summary_cols.push_back(axis.key);
    std::vector<std::vector<std::string>> summary_cells;
    Eigen::MatrixXd summary_values;
    bool done = false;
    int cell = 0;
    while (!done) {
      Config cfg = base_cfg;
      cfg.set("task.name", task_name(ds.task));
      std::vector<std::string> cell_values;
      std::string cell_name = "cell" + std::to_string(cell);
      for (std::size_t a = 0; a < axes.size(); ++a) {
        cfg.set(axes[a].key, axes[a].values[counter[a]]);
        cell_values.push_back(axes[a].values[counter[a]]);
      }

      FitterNetworks nets;
      nets.build(fitter_from_config(cfg, model));
      nets.init_weights(cfg.get_u64("fitter.seed"), reference_pose(model, ds.task));
      nets.config_hash = cfg.hash();
      const TrainConfig tc = train_from_config(cfg);
      train_fitter(nets, model, to_samples(ds, Split::Train),
                   to_samples(ds, Split::Val), tc);
      const EvalReport report =
          evaluate_learned(model, ds, Split::Test, nets,
                           cfg.get_int("fitter.iterations"), tc.workers);
      write_csv(ab_out_dir + "/" + cell_name + ".csv", report.columns, report.values,
                cfg.hash(), true);

      const Eigen::VectorXd mean = report.mean();
      if (summary_values.size() == 0) {
        for (std::size_t c = 1; c < report.columns.size(); ++c)
          summary_cols.push_back(report.columns[c]);
        summary_values.resize(0, static_cast<Eigen::Index>(mean.size() - 1));
      }
      summary_values.conservativeResize(summary_values.rows() + 1, Eigen::NoChange);
      summary_values.row(summary_values.rows() - 1) =
          mean.tail(mean.size() - 1).transpose();
      summary_cells.push_back(cell_values);

      // Advance the cross-product counter.
      done = true;
      for (std::size_t a = 0; a < axes.size(); ++a) {
        if (++counter[a] < axes[a].values.size()) {
          done = false;
          break;
        }
        counter[a] = 0;
      }
      ++cell;
    }

    // Summary table: axis values as labels, then mean metrics.
    std::ofstream out(ab_out_dir + "/summary.csv");
    if (!out) throw IoError("cannot write ablation summary");
    char hash_line[64];
    std::snprintf(hash_line, sizeof hash_line, "# config_hash=%016" PRIx64 "\n",
                  base_cfg.hash());
    out << hash_line;
    for (std::size_t c = 0; c < summary_cols.size(); ++c)
      out << summary_cols[c] << (c + 1 == summary_cols.size() ? "\n" : ",");
    for (Eigen::Index r = 0; r < summary_values.rows(); ++r) {
      for (const auto& v : summary_cells[static_cast<std::size_t>(r)]) out << v << ",";
      for (Eigen::Index c = 0; c < summary_values.cols(); ++c) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", summary_values(r, c));
        out << buf << (c + 1 == summary_values.cols() ? "\n" : ",");
      }
    }
    std::cout << "ablation: " << cell << " cells -> " << ab_out_dir << "\n";
    return 0;
  }

  if (plot_cmd->parsed()) {
    std::ofstream out(pc_out);
    if (!out) throw IoError("cannot write: " + pc_out);
    out << "source,iter,metric,value\n";
    for (const std::string& path : pc_inputs) {
      std::ifstream in(path);
      if (!in) throw IoError("cannot read: " + path);
      std::string line;
      std::vector<std::string> cols;
      const std::string source =
          std::filesystem::path(path).stem().string();
      while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::size_t at = 0;
        while (at != std::string::npos) {
          const auto comma = line.find(',', at);
          fields.push_back(line.substr(
              at, comma == std::string::npos ? std::string::npos : comma - at));
          at = comma == std::string::npos ? std::string::npos : comma + 1;
        }
        if (cols.empty()) {
          cols = fields;
          continue;
        }
        for (std::size_t c = 1; c < fields.size() && c < cols.size(); ++c)
          out << source << "," << fields[0] << "," << cols[c] << "," << fields[c]
              << "\n";
      }
    }
    std::cout << "long-format curves -> " << pc_out << "\n";
    return 0;
  }

  if (describe_cmd->parsed()) {
    Config cfg = build_config(dl_args);
    if (!dl_task.empty()) cfg.set("task.name", dl_task);
    const Task task = task_from_name(cfg.get_string("task.name"));
    KinematicModel model;
    if (!dl_model.empty()) {
      model = load_model(dl_model);
    } else {
      if (task == Task::Face) cfg.set("model.tree", "face");
      model = model_from_config(cfg);
    }
    const ParamLayout layout = model.layout(task);

    std::cout << "task: " << task_name(task) << "\n";
    std::cout << "parameter layout (" << layout.size() << " values):\n";
    for (int j = 0; j < layout.joints; ++j)
      std::cout << "  [" << layout.rot_offset(j) << ", " << layout.rot_offset(j) + 6
                << ") rotation6d joint " << j << "\n";
    std::cout << "  [" << layout.translation_offset() << ", "
              << layout.translation_offset() + 3 << ") root translation\n";
    if (layout.expr_dims > 0)
      std::cout << "  [" << layout.expr_offset() << ", "
                << layout.expr_offset() + layout.expr_dims << ") expression\n";
    if (layout.shape_dims > 0)
      std::cout << "  [" << layout.shape_offset() << ", "
                << layout.shape_offset() + layout.shape_dims << ") shape\n";
    if (layout.has_camera())
      std::cout << "  [" << layout.camera_offset() << ", " << layout.camera_offset() + 3
                << ") camera scale + translation\n";

    std::cout << "residual layout (" << residual_size(task, model) << " values):\n";
    for (const auto& block : residual_layout(task, model))
      std::cout << "  [" << block.offset << ", " << block.offset + block.length << ") "
                << block.name << "\n";
    std::cout << "observation encoding (" << encoding_dim(model, task)
              << " values):\n";
    for (const auto& block : encoding_layout(model, task))
      std::cout << "  [" << block.offset << ", " << block.offset + block.length << ") "
                << block.name << "\n";
    return 0;
  }

  if (defcfg_cmd->parsed()) {
    if (dc_out.empty()) {
      std::cout << Config::default_text();
    } else {
      std::ofstream out(dc_out);
      if (!out) throw IoError("cannot write: " + dc_out);
      out << Config::default_text();
      std::cout << "default config -> " << dc_out << "\n";
    }
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const mofit::BadConfig& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const mofit::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mofit::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mofit::NonFiniteState& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const mofit::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
