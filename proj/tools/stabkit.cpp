#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <stabkit/bounds.hpp>
#include <stabkit/trainer.hpp>
#include <stabkit/transport.hpp>

using namespace stabkit;
namespace fs = std::filesystem;

namespace {

struct RunSpec {
  Task task = Task::denoising;
  std::string model_kind = "toy_denoiser";
  StabilizerSpec stabilizer;
  DatasetConfig dataset;
  TrainConfig train;
  std::string corruption;  // '+'-separated chain in CLI syntax
};

std::vector<CorruptionSpec> parse_corruption_chain(const std::string& text) {
  std::vector<CorruptionSpec> chain;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, '+'))
    if (!item.empty()) chain.push_back(parse_corruption(item));
  return chain;
}

RunSpec load_run_spec(const std::string& path) {
  nlohmann::json j = read_json(path);
  RunSpec spec;
  spec.task = task_from_name(j.value("task", "denoising"));
  spec.model_kind =
      j.value("model", spec.task == Task::denoising ? "toy_denoiser" : "toy_enhancer");
  if (j.contains("stabilizer")) {
    const auto& s = j["stabilizer"];
    spec.stabilizer.kind = stabilizer_kind_from_name(s.value("kind", "controlled"));
    spec.stabilizer.k = s.value("k", 3);
    spec.stabilizer.fixed_beta = s.value("fixed_beta", 0.5);
    spec.stabilizer.layers = s.value("layers", std::vector<std::string>{"output"});
    spec.stabilizer.controller.init_bias = s.value("init_bias", 4.0);
    spec.stabilizer.controller.backbone_channels = s.value("backbone_channels", 8);
    spec.stabilizer.controller.head_channels = s.value("head_channels", 8);
    spec.stabilizer.controller.features_in_head = s.value("features_in_head", true);
  }
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    spec.dataset.n_train = d.value("n_train", 10);
    spec.dataset.n_val = d.value("n_val", 4);
    spec.dataset.tau_train_seq = d.value("tau_train_seq", 24);
    spec.dataset.tau_val = d.value("tau_val", 32);
    spec.dataset.shape = d.value("shape", Shape{1, 32, 32});
    spec.dataset.noise_sigma = d.value("noise_sigma", 0.1);
  }
  if (j.contains("schedule")) {
    const auto& s = j["schedule"];
    spec.train.epochs = s.value("epochs", 5);
    spec.train.steps_per_epoch = s.value("steps_per_epoch", 200);
    spec.train.lr = s.value("lr", 1e-4);
    spec.train.lr_drop_epochs = s.value("lr_drops", std::vector<int>{3, 4});
  }
  spec.train.lambda = j.value("lambda", 0.2);
  spec.train.tau_train = j.value("tau", 8);
  spec.train.seed = j.value("seed", 1);
  spec.train.joint_base = j.value("joint_base", false);
  spec.dataset.seed = spec.train.seed;
  spec.corruption = j.value("corruption", "");
  spec.dataset.extra = parse_corruption_chain(spec.corruption);
  return spec;
}

Dataset build_dataset(const RunSpec& spec) { return make_dataset(spec.task, spec.dataset); }

std::shared_ptr<FrameModel> build_or_load_base(const RunSpec& spec, const std::string& base_dir) {
  if (!base_dir.empty()) return load_model(base_dir);
  return make_model(spec.model_kind, spec.dataset.shape[0], spec.train.seed);
}

StabilizedModel build_stabilized(const RunSpec& spec, std::shared_ptr<FrameModel> base) {
  StabilizerSpec s = spec.stabilizer;
  s.controller.seed = spec.train.seed + 101;
  return attach(std::move(base), s.layers, s);
}

void write_eval_outputs(const fs::path& out_dir, const EvalReport& report) {
  fs::create_directories(out_dir);
  write_metrics_csv(out_dir / "metrics.csv", report.rows);
  write_json(out_dir / "summary.json", report.to_json());
  std::cout << "PSNR " << report.mean_psnr << " dB, instability " << report.mean_instability
            << ", robustness error " << report.mean_robustness_error << "\n";
  std::cout << "wrote " << (out_dir / "metrics.csv").string() << "\n";
}

Tensor load_raw_tensor(const std::string& path, int h, int w) {
  auto values = read_f64_blob(path, static_cast<std::size_t>(h) * w);
  return Tensor::from({h, w}, std::move(values));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"temporal stabilizers for frame-wise predictors"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic sequence directory");
  std::uint64_t synth_seed = 1;
  int synth_tau = 16;
  std::vector<int> synth_shape = {1, 32, 32};
  std::string synth_motion = "translating_shapes";
  std::string synth_corruption;
  std::string synth_out = "sequence";
  synth->add_option("--seed", synth_seed, "scene seed");
  synth->add_option("--tau", synth_tau, "frame count");
  synth->add_option("--shape", synth_shape, "C H W")->expected(3);
  synth->add_option("--motion", synth_motion, "static|translating_shapes|oscillating_texture");
  synth->add_option("--corruption", synth_corruption, "kind:params:seed, '+'-separated chain");
  synth->add_option("--out", synth_out, "output directory")->required();

  auto* train_base_cmd = app.add_subcommand("train-base", "fine-tune a base model (MSE)");
  std::string tb_config, tb_out = "base_run";
  train_base_cmd->add_option("--config", tb_config, "run spec JSON")->required();
  train_base_cmd->add_option("--out", tb_out, "output directory");

  auto* train_stab_cmd =
      app.add_subcommand("train-stab", "train stabilizers with the unified loss");
  std::string ts_config, ts_base, ts_out = "stab_run";
  train_stab_cmd->add_option("--config", ts_config, "run spec JSON")->required();
  train_stab_cmd->add_option("--base", ts_base, "base model checkpoint directory");
  train_stab_cmd->add_option("--out", ts_out, "output directory");

  auto* sweep_cmd = app.add_subcommand("sweep", "train once per lambda and emit the frontier");
  std::string sw_config, sw_base, sw_out = "sweep_run";
  std::vector<double> sw_lambdas = {0.1, 0.2, 0.4, 0.8, 8.0};
  sweep_cmd->add_option("--config", sw_config, "run spec JSON")->required();
  sweep_cmd->add_option("--base", sw_base, "base model checkpoint directory");
  sweep_cmd->add_option("--lambdas", sw_lambdas, "lambda values");
  sweep_cmd->add_option("--out", sw_out, "output directory");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a base or stabilized model");
  std::string ev_config, ev_base, ev_stab, ev_out = "eval_run", ev_corruption;
  eval_cmd->add_option("--config", ev_config, "run spec JSON")->required();
  eval_cmd->add_option("--base", ev_base, "base model checkpoint directory");
  eval_cmd->add_option("--stab", ev_stab, "stabilizer checkpoint directory");
  eval_cmd->add_option("--corruption", ev_corruption, "override the config corruption chain");
  eval_cmd->add_option("--out", ev_out, "output directory");

  auto* verify_cmd = app.add_subcommand("verify-bounds", "numeric checks of the loss landscape");
  std::string vb_out = "bounds_run";
  int vb_instances = 200;
  double vb_lambda = 0.4;
  std::uint64_t vb_seed = 7;
  verify_cmd->add_option("--out", vb_out, "output directory");
  verify_cmd->add_option("--instances", vb_instances, "instances per check");
  verify_cmd->add_option("--lambda", vb_lambda, "oracle-regime lambda (< 1/2)");
  verify_cmd->add_option("--seed", vb_seed, "random seed");

  auto* transport_cmd = app.add_subcommand("transport", "LP transport distance between tensors");
  std::string tr_a, tr_b, tr_dump;
  std::vector<int> tr_shape = {8, 8};
  double tr_gamma = 1.5;
  transport_cmd->add_option("z1", tr_a, "raw f64-le tensor file")->required();
  transport_cmd->add_option("z2", tr_b, "raw f64-le tensor file")->required();
  transport_cmd->add_option("--shape", tr_shape, "H W")->expected(2);
  transport_cmd->add_option("--gamma", tr_gamma, "create/destroy unit cost");
  transport_cmd->add_option("--dump", tr_dump, "CSV path for the flow solution");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      VideoSequence seq = generate_sequence(synth_seed, synth_tau,
                                            {synth_shape[0], synth_shape[1], synth_shape[2]},
                                            motion_model_from_name(synth_motion));
      nlohmann::json meta = {{"scene_seed", synth_seed},
                             {"motion", synth_motion},
                             {"corruption", synth_corruption}};
      if (!synth_corruption.empty())
        seq = corrupt_chain(seq, parse_corruption_chain(synth_corruption));
      save_sequence(synth_out, seq, meta);
      std::cout << "wrote " << synth_out << " (tau=" << seq.tau() << ")\n";
    }

    if (*train_base_cmd) {
      RunSpec spec = load_run_spec(tb_config);
      Dataset data = build_dataset(spec);
      auto model = make_model(spec.model_kind, spec.dataset.shape[0], spec.train.seed);
      auto log = train_base(*model, data, spec.train);
      fs::create_directories(tb_out);
      save_model(fs::path(tb_out) / "model", *model);
      log.checkpoint = (fs::path(tb_out) / "model").string();
      write_train_log_csv(fs::path(tb_out) / "log.csv", log);
      write_json(fs::path(tb_out) / "summary.json",
                 {{"val_psnr", log.final_row().val_psnr},
                  {"val_instability", log.final_row().val_instability},
                  {"train_loss", log.final_row().train_loss},
                  {"checkpoint", log.checkpoint}});
      std::cout << "final val PSNR " << log.final_row().val_psnr << " dB\n";
    }

    if (*train_stab_cmd) {
      RunSpec spec = load_run_spec(ts_config);
      Dataset data = build_dataset(spec);
      auto base = build_or_load_base(spec, ts_base);
      StabilizedModel sm = build_stabilized(spec, base);
      auto log = train_stabilizer(sm, data, spec.train);
      fs::create_directories(ts_out);
      save_stabilizer(fs::path(ts_out) / "stabilizer", sm);
      log.checkpoint = (fs::path(ts_out) / "stabilizer").string();
      write_train_log_csv(fs::path(ts_out) / "log.csv", log);
      write_json(fs::path(ts_out) / "summary.json",
                 {{"val_psnr", log.final_row().val_psnr},
                  {"val_instability", log.final_row().val_instability},
                  {"lambda", spec.train.lambda},
                  {"base_hash", log.base_hash_after},
                  {"checkpoint", log.checkpoint}});
      std::cout << "final val PSNR " << log.final_row().val_psnr << " dB, instability "
                << log.final_row().val_instability << "\n";
    }

    if (*sweep_cmd) {
      RunSpec spec = load_run_spec(sw_config);
      Dataset data = build_dataset(spec);
      auto factory = [&] {
        auto base = build_or_load_base(spec, sw_base);
        return build_stabilized(spec, base);
      };
      auto rows = sweep(factory, data, spec.train, sw_lambdas);
      fs::create_directories(sw_out);
      write_sweep_csv(fs::path(sw_out) / "sweep.csv", rows);
      write_frontier_svg(fs::path(sw_out) / "frontier.svg", rows);
      for (const auto& r : rows)
        std::cout << "lambda " << r.lambda << ": PSNR " << r.psnr << " dB, instability "
                  << r.instability << "\n";
    }

    if (*eval_cmd) {
      RunSpec spec = load_run_spec(ev_config);
      if (!ev_corruption.empty()) {
        spec.corruption = ev_corruption;
        spec.dataset.extra = parse_corruption_chain(ev_corruption);
      }
      Dataset data = build_dataset(spec);
      auto base = build_or_load_base(spec, ev_base);
      if (ev_stab.empty()) {
        auto report = evaluate(eval_ref(*base), data.val);
        write_eval_outputs(ev_out, report);
      } else {
        StabilizedModel sm = build_stabilized(spec, base);
        load_stabilizer(ev_stab, sm);
        auto report = evaluate(eval_ref(sm), data.val, metric_l2(Reduction::mean_over_pairs),
                               spec.train.lambda);
        write_eval_outputs(ev_out, report);
      }
    }

    if (*verify_cmd) {
      fs::create_directories(vb_out);
      auto oracle = verify_oracle_bound(vb_instances, vb_lambda, {2, 6}, {1, 3}, vb_seed);
      nlohmann::json collapse_json = nlohmann::json::array();
      int per_tau = std::max(1, vb_instances / 5);
      bool collapse_ok = true;
      for (int tau = 2; tau <= 6; ++tau) {
        auto rep = verify_collapse_bound(per_tau, static_cast<double>(tau), tau, vb_seed + tau);
        collapse_ok = collapse_ok && rep.pass_fraction() == 1.0;
        auto j = rep.to_json();
        j["tau"] = tau;
        collapse_json.push_back(j);
      }
      Rng conv_rng(vb_seed);
      BoundInstance conv = random_instance(conv_rng, 4, 2, 0.9, NormKind::l2);
      auto convexity = verify_convexity(conv, 1000, vb_seed);

      BoundInstance fig;
      fig.y = {{0.2}, {0.7}, {0.4}};
      fig.y_hat_1 = {0.2};
      fig.zeta = NormKind::l1;
      nlohmann::json landscapes = nlohmann::json::array();
      for (double lambda : {0.0, 0.4, 2.5}) {
        auto grid = landscape_grid(fig, lambda, 0.0, 1.0, 1e-3);
        std::ostringstream tag;
        tag << "landscape_lambda_" << lambda;
        write_landscape_csv(fs::path(vb_out) / (tag.str() + ".csv"), grid);
        write_landscape_svg(fs::path(vb_out) / (tag.str() + ".svg"), grid,
                            "unified loss, lambda=" + std::to_string(lambda));
        landscapes.push_back({{"lambda", lambda},
                              {"argmin_y2", grid.argmin_y2},
                              {"argmin_y3", grid.argmin_y3}});
      }
      nlohmann::json report = {{"oracle", oracle.to_json()},
                               {"collapse", collapse_json},
                               {"convexity", convexity.to_json()},
                               {"landscape", landscapes}};
      write_json(fs::path(vb_out) / "report.json", report);
      bool ok = oracle.pass_fraction() == 1.0 && collapse_ok && convexity.violations == 0;
      std::cout << (ok ? "bounds verified" : "BOUNDS CHECK FAILED") << "; report at "
                << (fs::path(vb_out) / "report.json").string() << "\n";
      return ok ? 0 : 1;
    }

    if (*transport_cmd) {
      Tensor z1 = load_raw_tensor(tr_a, tr_shape[0], tr_shape[1]);
      Tensor z2 = load_raw_tensor(tr_b, tr_shape[0], tr_shape[1]);
      Tensor a = Tensor::zeros({tr_shape[0], tr_shape[1]});
      for (std::int64_t i = 0; i < a.size(); ++i) a.data()[i] = z1.data()[i] - z2.data()[i];
      auto [cost, sol] = transport_distance(a, tr_gamma);
      std::cout << "transport cost " << cost << " (gamma " << tr_gamma << ", " << sol.moved.size()
                << " move arcs)\n";
      if (!tr_dump.empty()) {
        std::ofstream out(tr_dump, std::ios::trunc);
        out << "kind,from,to,mass\n";
        for (const auto& [from, to, mass] : sol.moved)
          out << "move," << from << ',' << to << ',' << mass << "\n";
        for (std::size_t i = 0; i < sol.consumed.size(); ++i)
          if (sol.consumed[i] > 0) out << "destroy," << i << ",," << sol.consumed[i] << "\n";
        for (std::size_t i = 0; i < sol.produced.size(); ++i)
          if (sol.produced[i] > 0) out << "create,," << i << ',' << sol.produced[i] << "\n";
        std::cout << "wrote " << tr_dump << "\n";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
