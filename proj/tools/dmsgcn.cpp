// dmsgcn: train / eval / predict / gradcheck / render / ablate.
//
// Every option can also be set in a key=value file passed with --config;
// command-line flags override the file. Unknown keys are rejected and the
// resolved configuration is echoed before the command runs.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.

#include <algorithm>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dmsgcn/commands.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

// Options whose storage does not map onto a RunConfig field directly.
struct Staging {
  std::int64_t rest_seed = 1;
  std::vector<int> max_hop{2, 2, 2};
};

void add_run_options(CLI::App& app, dmsgcn::RunConfig& cfg, Staging& staged) {
  dmsgcn::ModelConfig& m = cfg.model;
  dmsgcn::TrainConfig& t = cfg.train;
  const std::string model = "Model", optim = "Training", data = "Data", synth = "Synthetic data", cmd = "Commands";

  app.add_option("--observed_frames", m.observed_frames, "T, observed frames")->group(model)->capture_default_str();
  app.add_option("--predicted_frames", m.predicted_frames, "K, predicted frames")->group(model)->capture_default_str();
  app.add_option("--hidden_width", m.hidden_width)->group(model)->capture_default_str();
  app.add_option("--blocks_per_scale", m.blocks_per_scale)->group(model)->capture_default_str();
  app.add_option("--tcn_layers", m.tcn_layers)->group(model)->capture_default_str();
  app.add_option("--dropout", m.dropout)->group(model)->capture_default_str();
  app.add_option("--alpha", m.alpha, "fusion coefficient")->group(model)->capture_default_str();
  app.add_option("--learnable_alpha", m.learnable_alpha)->group(model)->capture_default_str();
  app.add_option("--max_hop", staged.max_hop, "mask hop limit per scale (joint bone part)")
      ->group(model)
      ->expected(3)
      ->delimiter(',')
      ->capture_default_str();
  app.add_option("--residual_decoder", m.residual_decoder)->group(model)->capture_default_str();
  app.add_option("--scales", m.scales, "1, 2 or 3")->group(model)->capture_default_str();
  app.add_option("--mask_enabled", m.mask_enabled)->group(model)->capture_default_str();
  app.add_option("--tgcn_enabled", m.tgcn_enabled)->group(model)->capture_default_str();
  app.add_option("--shared_adjacency", m.shared_adjacency, "one A_s per scale")->group(model)->capture_default_str();
  app.add_option("--fuse_hidden", m.fuse_hidden)->group(model)->capture_default_str();
  app.add_option("--seed", m.seed, "initialization seed")->group(model)->capture_default_str();
  app.add_option("--skeleton_config", cfg.skeleton_config, "skeleton/hierarchy INI file")
      ->group(model)
      ->check(CLI::ExistingFile);

  app.add_option("--epochs", t.epochs)->group(optim)->capture_default_str();
  app.add_option("--batch_size", t.batch_size)->group(optim)->capture_default_str();
  app.add_option("--lr", t.adam.lr, "base learning rate")->group(optim)->capture_default_str();
  app.add_option("--beta1", t.adam.beta1)->group(optim)->capture_default_str();
  app.add_option("--beta2", t.adam.beta2)->group(optim)->capture_default_str();
  app.add_option("--adam_eps", t.adam.eps)->group(optim)->capture_default_str();
  app.add_option("--lr_period", t.lr_period, "epochs between learning-rate halvings")->group(optim)->capture_default_str();
  app.add_option("--shuffle", t.shuffle)->group(optim)->capture_default_str();
  app.add_option("--train_seed", t.seed, "shuffling and dropout seed")->group(optim)->capture_default_str();
  app.add_option("--checkpoint_every", t.checkpoint_every, "epochs; 0 = final only")->group(optim)->capture_default_str();
  app.add_option("--dump_first_batch", t.dump_first_batch)->group(optim)->capture_default_str();
  app.add_option("--out_dir", t.out_dir, "run directory")->group(optim)->capture_default_str();

  app.add_option("--data", cfg.data)->group(data)->check(CLI::IsMember({"synthetic", "csv"}))->capture_default_str();
  app.add_option("--train_csv", cfg.train_csv)->group(data)->delimiter(',');
  app.add_option("--val_csv", cfg.val_csv)->group(data)->delimiter(',');
  app.add_option("--test_csv", cfg.test_csv)->group(data)->delimiter(',');
  app.add_option("--csv_header", cfg.csv_header)->group(data)->capture_default_str();
  app.add_option("--action_manifest", cfg.action_manifest, "source,action sidecar")->group(data);
  app.add_option("--center", cfg.center, "subtract each sequence's mean position")->group(data)->capture_default_str();
  app.add_option("--fps", cfg.fps)->group(data)->capture_default_str();
  app.add_option("--train_stride", cfg.train_stride)->group(data)->capture_default_str();
  app.add_option("--test_stride", cfg.test_stride)->group(data)->capture_default_str();
  app.add_option("--max_train_windows", cfg.max_train_windows, "0 = all")->group(data)->capture_default_str();

  app.add_option("--synthetic_seed", cfg.synthetic_seed)->group(synth)->capture_default_str();
  app.add_option("--synthetic_train_sequences", cfg.synthetic_train_sequences)->group(synth)->capture_default_str();
  app.add_option("--synthetic_val_sequences", cfg.synthetic_val_sequences)->group(synth)->capture_default_str();
  app.add_option("--synthetic_test_sequences", cfg.synthetic_test_sequences)->group(synth)->capture_default_str();
  app.add_option("--synthetic_frames", cfg.synthetic_frames)->group(synth)->capture_default_str();
  app.add_option("--synthetic_rest_seed", staged.rest_seed, "shared rest pose seed; negative = per-sequence offsets")
      ->group(synth)
      ->capture_default_str();

  app.add_option("--checkpoint", cfg.checkpoint, "checkpoint directory (default <out_dir>/final)")->group(cmd);
  app.add_option("--input", cfg.input, "pose CSV for predict and render")->group(cmd);
  app.add_option("--output", cfg.output, "predict: CSV file; render: SVG directory")->group(cmd);
  app.add_option("--render_frames", cfg.render_frames, "frames to render (default all)")->group(cmd)->delimiter(',');
  app.add_option("--render_prefix", cfg.render_prefix)->group(cmd)->capture_default_str();
  app.add_option("--gradcheck_seed", cfg.gradcheck_seed)->group(cmd)->capture_default_str();
  app.add_option("--gradcheck_model", cfg.gradcheck_model, "include the end-to-end model check")
      ->group(cmd)
      ->capture_default_str();
  app.add_option("--inject_fault", cfg.inject_fault, "add an op with a wrong backward to the gradient suite")
      ->group(cmd)
      ->capture_default_str();
  app.add_option("--ablate_epochs", cfg.ablate_epochs)->group(cmd)->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DMS-GCN motion prediction harness"};
  app.set_config("--config", "", "key=value run configuration file");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1, 1);
  app.fallthrough();

  dmsgcn::RunConfig cfg;
  cfg.train.out_dir = "run";
  Staging staged;
  add_run_options(app, cfg, staged);

  auto* train = app.add_subcommand("train", "train a model; writes loss.csv and checkpoints into out_dir");
  auto* eval = app.add_subcommand("eval", "MPJPE table at the reporting horizons on the test split");
  auto* predict = app.add_subcommand("predict", "predict K frames from the last T frames of --input");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_flag("--inject-fault", cfg.inject_fault, "same as --inject_fault true");
  auto* render = app.add_subcommand("render", "stick-figure SVGs of --input");
  auto* ablate = app.add_subcommand("ablate", "build and briefly train the ablation variants");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  }
  if (staged.rest_seed >= 0)
    cfg.synthetic_rest_seed = static_cast<std::uint64_t>(staged.rest_seed);
  else
    cfg.synthetic_rest_seed.reset();
  std::copy(staged.max_hop.begin(), staged.max_hop.end(), cfg.model.max_hop.begin());

  const std::string resolved = app.config_to_str(true, false);
  std::cout << "# resolved configuration\n" << resolved << std::flush;

  try {
    if (train->parsed()) {
      std::filesystem::create_directories(cfg.train.out_dir);
      std::ofstream(cfg.train.out_dir / "run_config.ini") << resolved;
      const auto result = dmsgcn::cmd_train(cfg, std::cout);
      std::cout << "trained " << result.steps << " steps in " << result.seconds << " s; final checkpoint "
                << (cfg.train.out_dir / "final").string() << '\n';
    } else if (eval->parsed()) {
      dmsgcn::cmd_eval(cfg, std::cout);
    } else if (predict->parsed()) {
      const auto out = dmsgcn::cmd_predict(cfg);
      std::cout << "wrote " << out.frames << " frames x " << out.joints << " joints to " << cfg.output.string() << '\n';
    } else if (gradcheck->parsed()) {
      if (!dmsgcn::cmd_gradcheck(cfg, std::cout).passed()) return kExitNumerical;
    } else if (render->parsed()) {
      const auto files = dmsgcn::cmd_render(cfg);
      std::cout << "wrote " << files.size() << " SVG files\n";
    } else if (ablate->parsed()) {
      dmsgcn::cmd_ablate(cfg, std::cout);
    }
  } catch (const dmsgcn::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const dmsgcn::ValidationError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const dmsgcn::ConfigMismatchError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const dmsgcn::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const dmsgcn::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const dmsgcn::DimensionError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const dmsgcn::CheckpointError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
