#include "carl/bound_checks.hpp"
#include "carl/envs/dataset.hpp"
#include "carl/evaluation.hpp"
#include "carl/io/png_io.hpp"
#include "carl/trainer.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace carl;

namespace {

int cmd_train(CLI::App& app) {
  auto* cmd = app.get_subcommand("train");
  std::string env = cmd->get_option("--env")->as<std::string>();
  std::string regime = cmd->get_option("--regime")->as<std::string>();
  std::string config_path = cmd->get_option("--config")->as<std::string>();
  std::string resume_dir = cmd->get_option("--resume")->as<std::string>();

  if (!resume_dir.empty()) {
    train::Trainer t = train::Trainer::resume(resume_dir);
    train::TrainSummary s = t.run();
    std::printf("resumed run complete: %s iterations=%d env_samples=%llu goal=%.2f%%\n",
                s.run_dir.c_str(), s.iterations,
                static_cast<unsigned long long>(s.env_samples), s.final_percent_goal);
    return 0;
  }

  train::RunConfig cfg;
  if (!config_path.empty()) {
    std::ifstream is(config_path);
    if (!is) throw ConfigError("cannot read config file " + config_path);
    cfg = train::RunConfig::from_json(nlohmann::json::parse(is));
  } else {
    cfg = train::RunConfig::defaults_for(env, losses::regime_from_string(regime));
  }
  auto override_int = [&](const char* flag, int& field) {
    if (cmd->count(flag)) field = cmd->get_option(flag)->as<int>();
  };
  auto override_dbl = [&](const char* flag, double& field) {
    if (cmd->count(flag)) field = cmd->get_option(flag)->as<double>();
  };
  if (cmd->count("--seed")) cfg.seed = cmd->get_option("--seed")->as<std::uint64_t>();
  if (cmd->count("--out")) cfg.out_dir = cmd->get_option("--out")->as<std::string>();
  override_int("--total-samples", cfg.total_env_samples);
  override_int("--initial-samples", cfg.initial_samples);
  override_int("--samples-per-iteration", cfg.samples_per_iteration);
  override_int("--lce-epochs-offline", cfg.lce_epochs_offline);
  override_int("--lce-epochs-per-iteration", cfg.lce_epochs_per_iteration);
  override_int("--sac-steps-offline", cfg.sac_steps_offline);
  override_int("--sac-steps-per-iteration", cfg.sac_steps_per_iteration);
  override_int("--distill-epochs", cfg.distill_epochs);
  override_int("--batch-size", cfg.batch_size);
  override_int("--eval-episodes", cfg.eval_episodes);
  override_int("--eval-every-sac-steps", cfg.eval_every_sac_steps);
  override_int("--checkpoint-every-steps", cfg.checkpoint_every_steps);
  override_dbl("--lce-lr", cfg.lce_lr);
  override_dbl("--l2", cfg.l2_coeff);
  override_dbl("--tau-vg", cfg.loss_weights.tau_vg);
  override_dbl("--lambda-reg", cfg.loss_weights.lambda_reg);
  override_dbl("--bias-p", cfg.bias_p);
  if (cmd->count("--initial-mode"))
    cfg.initial_mode =
        envs::sample_mode_from_string(cmd->get_option("--initial-mode")->as<std::string>());
  if (cmd->count("--no-distill")) cfg.distill_enabled = false;
  if (cmd->count("--sac-bootstrap")) cfg.sac.bootstrap = true;
  if (cmd->count("--sac-rollout-k")) cfg.sac.rollout_k = cmd->get_option("--sac-rollout-k")->as<int>();
  if (cmd->count("--reward-form"))
    cfg.sac.reward_form =
        sac::reward_form_from_string(cmd->get_option("--reward-form")->as<std::string>());

  train::Trainer t(cfg);
  train::TrainSummary s = t.run();
  std::printf("run complete: %s iterations=%d env_samples=%llu goal=%.2f%%\n",
              s.run_dir.c_str(), s.iterations, static_cast<unsigned long long>(s.env_samples),
              s.final_percent_goal);
  return 0;
}

int cmd_eval(CLI::App& app) {
  auto* cmd = app.get_subcommand("eval");
  std::string run_dir = cmd->get_option("--run")->as<std::string>();
  int episodes = cmd->get_option("--episodes")->as<int>();
  int models = cmd->get_option("--protocol-models")->as<int>();
  int tasks = cmd->get_option("--protocol-tasks")->as<int>();

  if (models > 0) {
    std::ifstream is(fs::path(run_dir) / "config.json");
    if (!is) throw ConfigError("eval --protocol needs a run dir with config.json");
    train::RunConfig base = train::RunConfig::from_json(nlohmann::json::parse(is));
    base.out_dir = run_dir + "/protocol";
    evalr::ProtocolResult res = train::run_protocol(base, models, tasks);
    std::string table = evalr::protocol_table(base.env, losses::to_string(base.regime), res);
    std::ofstream os(fs::path(run_dir) / "protocol_table.csv");
    os << table;
    std::cout << table;
    return 0;
  }

  train::Trainer t = train::Trainer::resume(run_dir);
  envs::ActFn policy = evalr::make_policy(t.lce(), t.agent());
  envs::StepCounter counter;
  evalr::EvalReport rep = evalr::percent_goal(t.env(), policy, episodes,
                                              t.env().spec().horizon,
                                              t.config().seed ^ 0x5eedull, &counter);
  std::printf("%%-goal over %d episodes: mean=%.2f stderr=%.2f (eval steps: %llu, %.1fs)\n",
              episodes, rep.mean, rep.stderr_episodes,
              static_cast<unsigned long long>(rep.env_steps), rep.wall_clock_s);
  return 0;
}

int cmd_verify_bounds(CLI::App& app) {
  auto* cmd = app.get_subcommand("verify-bounds");
  bounds::SuiteConfig cfg;
  cfg.instances = cmd->get_option("--instances")->as<int>();
  cfg.max_nx = cmd->get_option("--max-nx")->as<int>();
  cfg.max_nz = cmd->get_option("--max-nz")->as<int>();
  cfg.max_na = cmd->get_option("--max-na")->as<int>();
  cfg.gamma = cmd->get_option("--gamma")->as<double>();
  cfg.tolerance = cmd->get_option("--tolerance")->as<double>();
  cfg.seed0 = cmd->get_option("--seed0")->as<std::uint64_t>();
  std::string csv = cmd->get_option("--csv")->as<std::string>();

  bounds::SuiteResult res = bounds::run_bound_suite(cfg);
  if (!csv.empty()) bounds::write_suite_csv(res, csv);
  int fails = 0;
  for (const auto& r : res.rows)
    if (!r.pass) ++fails;
  std::printf("instances=%zu pass=%zu fail=%d min_slack=%.6g\n", res.rows.size(),
              res.rows.size() - std::size_t(fails), fails, res.min_slack);
  for (const auto& r : res.rows) {
    if (!r.pass)
      std::printf("  FAIL seed=%llu nx=%d nz=%d na=%d slacks: imp=%.3g pe=%.3g off=%.3g\n",
                  static_cast<unsigned long long>(r.seed), r.nx, r.nz, r.na,
                  r.improvement_slack, r.policy_eval_slack, r.offline_slack);
  }
  std::printf("%s\n", res.all_pass ? "PASS" : "FAIL");
  return res.all_pass ? 0 : 1;
}

int cmd_plot(CLI::App& app) {
  auto* cmd = app.get_subcommand("plot");
  auto* curves = cmd->get_subcommand("curves");
  auto* latent = cmd->get_subcommand("latent-map");
  if (curves->parsed()) {
    std::vector<std::string> runs = curves->get_option("--runs")->as<std::vector<std::string>>();
    std::string out = curves->get_option("--out")->as<std::string>();
    evalr::export_curves(runs, out);
    std::printf("wrote %s.csv and %s.png\n", out.c_str(), out.c_str());
    return 0;
  }
  if (latent->parsed()) {
    std::string run_dir = latent->get_option("--run")->as<std::string>();
    int density = latent->get_option("--density")->as<int>();
    std::string out = latent->get_option("--out")->as<std::string>();
    if (out.empty()) out = run_dir + "/latent_map";
    train::Trainer t = train::Trainer::resume(run_dir);
    evalr::LatentMapResult res = evalr::latent_map(t.lce(), t.env(), density, out);
    std::printf("latent map with %d points -> %s, %s\n", res.points, res.png_path.c_str(),
                res.csv_path.c_str());
    return 0;
  }
  throw CLI::CallForHelp();
}

int cmd_sample_data(CLI::App& app) {
  auto* cmd = app.get_subcommand("sample-data");
  std::string env_name = cmd->get_option("--env")->as<std::string>();
  int n = cmd->get_option("--n")->as<int>();
  std::string mode_s = cmd->get_option("--mode")->as<std::string>();
  double p = cmd->get_option("--p")->as<double>();
  std::uint64_t seed = cmd->get_option("--seed")->as<std::uint64_t>();
  std::string out = cmd->get_option("--out")->as<std::string>();
  bool goldens = cmd->count("--goldens") > 0;

  auto env = envs::make_env(env_name, seed);
  if (p < 0) p = env->spec().default_bias_p;
  envs::SampleMode mode = envs::sample_mode_from_string(mode_s);
  Rng rng = Rng::substream(seed, "dataset");
  envs::StepCounter counter;
  auto data = envs::sample_dataset(*env, n, mode, p, rng, &counter);
  envs::save_dataset(out, *env, data, mode, p);
  std::printf("wrote %d triplets to %s (env steps: %llu)\n", n, out.c_str(),
              static_cast<unsigned long long>(counter.steps));

  if (goldens) {
    fs::create_directories(fs::path(out) / "frames");
    Rng frng = Rng::substream(seed, "golden-frames");
    for (int i = 0; i < 8; ++i) {
      envs::UnderlyingState s = env->sample_uniform_state(frng);
      envs::Frame f = env->render(s);
      io::write_png_gray((fs::path(out) / "frames" / ("state_" + std::to_string(i) + ".png"))
                             .string(),
                         env->spec().height, env->spec().width, f.data());
    }
    std::printf("wrote 8 reference frames to %s/frames\n", out.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latent control-aware representation learning lab"};
  app.require_subcommand(1);

  auto* train_cmd = app.add_subcommand("train", "train a model (offline/online/value_guided)");
  train_cmd->add_option("--env", "environment: planar|swingup|cartpole|threepole")
      ->default_val("planar");
  train_cmd->add_option("--regime", "offline|online|value_guided")->default_val("offline");
  train_cmd->add_option("--config", "JSON run config (flags override)")->default_val("");
  train_cmd->add_option("--resume", "resume from a run directory")->default_val("");
  train_cmd->add_option("--seed", "master seed")->default_val("0");
  train_cmd->add_option("--out", "run directory")->default_val("runs/run0");
  train_cmd->add_option("--total-samples", "environment sample budget");
  train_cmd->add_option("--initial-samples", "online warm-start budget");
  train_cmd->add_option("--samples-per-iteration", "online per-iteration collection");
  train_cmd->add_option("--lce-epochs-offline", "representation epochs (offline)");
  train_cmd->add_option("--lce-epochs-per-iteration", "representation epochs per iteration");
  train_cmd->add_option("--sac-steps-offline", "controller updates (offline)");
  train_cmd->add_option("--sac-steps-per-iteration", "controller updates per iteration");
  train_cmd->add_option("--distill-epochs", "policy distillation epochs");
  train_cmd->add_option("--batch-size", "minibatch size");
  train_cmd->add_option("--eval-episodes", "episodes per evaluation row");
  train_cmd->add_option("--eval-every-sac-steps", "evaluation cadence inside SAC phases");
  train_cmd->add_option("--checkpoint-every-steps", "extra mid-phase checkpoint cadence");
  train_cmd->add_option("--lce-lr", "representation learning rate");
  train_cmd->add_option("--l2", "L2 coefficient on representation parameters");
  train_cmd->add_option("--tau-vg", "value-guidance temperature");
  train_cmd->add_option("--lambda-reg", "encoder regularizer weight");
  train_cmd->add_option("--bias-p", "biased-region proportion for warm starts");
  train_cmd->add_option("--initial-mode", "uniform|biased warm-start sampling");
  train_cmd->add_flag("--no-distill", "disable policy distillation");
  train_cmd->add_flag("--sac-bootstrap", "bootstrap rollout tails with target critics");
  train_cmd->add_option("--sac-rollout-k", "latent rollout length for Q targets");
  train_cmd->add_option("--reward-form", "quadratic|neg_distance");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a trained run");
  eval_cmd->add_option("--run", "run directory")->required();
  eval_cmd->add_option("--episodes", "episodes")->default_val("10");
  eval_cmd->add_option("--protocol-models", "train this many seeds and tabulate")
      ->default_val("0");
  eval_cmd->add_option("--protocol-tasks", "episodes per model in protocol mode")
      ->default_val("10");

  auto* vb = app.add_subcommand("verify-bounds", "exact finite-instance bound certification");
  vb->add_option("--instances", "number of seeded instances")->default_val("100");
  vb->add_option("--max-nx", "max observation states")->default_val("8");
  vb->add_option("--max-nz", "max latent states")->default_val("4");
  vb->add_option("--max-na", "max actions")->default_val("3");
  vb->add_option("--gamma", "discount")->default_val("0.9");
  vb->add_option("--tolerance", "slack tolerance")->default_val("1e-9");
  vb->add_option("--seed0", "first seed")->default_val("0");
  vb->add_option("--csv", "write the per-instance report here")->default_val("");

  auto* plot = app.add_subcommand("plot", "emit curves and latent maps");
  auto* curves = plot->add_subcommand("curves", "%-goal vs samples across runs");
  curves->add_option("--runs", "run directories")->required()->delimiter(',');
  curves->add_option("--out", "output prefix")->required();
  auto* latent = plot->add_subcommand("latent-map", "encoded state-grid scatter");
  latent->add_option("--run", "run directory")->required();
  latent->add_option("--density", "grid density")->default_val("40");
  latent->add_option("--out", "output prefix")->default_val("");

  auto* sd = app.add_subcommand("sample-data", "generate a triplet dataset");
  sd->add_option("--env", "environment")->required();
  sd->add_option("--n", "triplets")->required();
  sd->add_option("--mode", "uniform|biased")->default_val("uniform");
  sd->add_option("--p", "biased proportion (-1: env default)")->default_val("-1.0");
  sd->add_option("--seed", "seed")->default_val("0");
  sd->add_option("--out", "output directory")->required();
  sd->add_flag("--goldens", "also write reference frame renders");

  try {
    app.parse(argc, argv);
    if (app.got_subcommand("train")) return cmd_train(app);
    if (app.got_subcommand("eval")) return cmd_eval(app);
    if (app.got_subcommand("verify-bounds")) return cmd_verify_bounds(app);
    if (app.got_subcommand("plot")) return cmd_plot(app);
    if (app.got_subcommand("sample-data")) return cmd_sample_data(app);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
