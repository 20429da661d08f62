#include "carl/evaluation.hpp"

#include "carl/io/plot.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace carl::evalr {

namespace fs = std::filesystem;

EvalReport percent_goal(const envs::Env& env, const envs::ActFn& act_fn, int episodes,
                        int horizon, std::uint64_t seed, envs::StepCounter* counter) {
  auto t0 = std::chrono::steady_clock::now();
  EvalReport rep;
  envs::StepCounter local;
  envs::StepCounter* cnt = counter ? counter : &local;
  for (int ep = 0; ep < episodes; ++ep) {
    Rng rng = Rng::substream(seed, "eval-episode-" + std::to_string(ep));
    envs::UnderlyingState s = env.initial_state(rng);
    envs::Observation goal = observe_static(env, env.goal_state_for(s));
    envs::UnderlyingState prev = s;
    int goal_steps = 0;
    for (int t = 0; t < horizon; ++t) {
      envs::Observation x = envs::with_goal(observe(env, prev, s), goal);
      VecF a = act_fn(x);
      envs::StepOutput so = envs::step(env, s, a, cnt);
      prev = s;
      s = so.next;
      if (env.is_goal(s)) ++goal_steps;
    }
    rep.per_episode.push_back(100.0 * double(goal_steps) / double(horizon));
  }
  double sum = 0.0;
  for (double v : rep.per_episode) sum += v;
  rep.mean = sum / double(episodes);
  double var = 0.0;
  for (double v : rep.per_episode) var += (v - rep.mean) * (v - rep.mean);
  rep.stderr_episodes =
      episodes > 1 ? std::sqrt(var / double(episodes - 1)) / std::sqrt(double(episodes)) : 0.0;
  rep.env_steps = cnt->steps;
  rep.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

envs::ActFn make_policy(const model::LceF& lce, const sac::SacAgent& agent) {
  const model::LceF* m = &lce;
  const sac::SacAgent* ag = &agent;
  return [m, ag](const envs::Observation& obs) -> VecF {
    VecF z = m->encode_means(obs.pixels).col(0);
    VecF zg = VecF::Zero(m->arch.n_z);
    if (ag->goal_conditioned()) {
      if (obs.goal_pixels.size() == 0) throw InputError("policy observation lacks goal pixels");
      zg = m->encode_means(obs.goal_pixels).col(0);
    }
    return ag->act(ag->actor_input(z, zg), /*explore=*/false);
  };
}

ProtocolResult aggregate_protocol(const std::vector<ProtocolRow>& rows) {
  ProtocolResult res;
  res.rows = rows;
  std::vector<double> means;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].failed) continue;
    means.push_back(rows[i].mean);
    if (res.best_index < 0 || rows[i].mean > res.best_mean) {
      res.best_index = int(i);
      res.best_mean = rows[i].mean;
      res.best_stderr = rows[i].stderr_episodes;
    }
  }
  if (means.empty()) return res;
  double sum = 0.0;
  for (double v : means) sum += v;
  res.avg_of_means = sum / double(means.size());
  double var = 0.0;
  for (double v : means) var += (v - res.avg_of_means) * (v - res.avg_of_means);
  res.stderr_over_models = means.size() > 1 ? std::sqrt(var / double(means.size() - 1)) /
                                                  std::sqrt(double(means.size()))
                                            : 0.0;
  return res;
}

std::string protocol_table(const std::string& env, const std::string& regime,
                           const ProtocolResult& res) {
  std::ostringstream os;
  char buf[256];
  os << "environment,algorithm,samples,avg_goal,stderr,best_goal,best_stderr,models,failed\n";
  std::uint64_t samples = 0;
  int failed = 0;
  for (const auto& r : res.rows) {
    if (r.failed)
      ++failed;
    else
      samples = r.env_samples;
  }
  std::snprintf(buf, sizeof(buf), "%s,%s,%llu,%.2f,%.2f,%.2f,%.2f,%zu,%d\n", env.c_str(),
                regime.c_str(), static_cast<unsigned long long>(samples), res.avg_of_means,
                res.stderr_over_models, res.best_mean, res.best_stderr, res.rows.size(), failed);
  os << buf;
  for (std::size_t i = 0; i < res.rows.size(); ++i) {
    const auto& r = res.rows[i];
    std::snprintf(buf, sizeof(buf), "# model %zu seed=%llu %s mean=%.2f stderr=%.2f\n", i,
                  static_cast<unsigned long long>(r.seed), r.failed ? "FAILED" : "ok", r.mean,
                  r.stderr_episodes);
    os << buf;
  }
  return os.str();
}

LatentMapResult latent_map(const model::LceF& lce, const envs::Env& env, int grid_density,
                           const std::string& out_prefix) {
  const envs::EnvSpec& sp = env.spec();
  std::vector<envs::UnderlyingState> states;
  std::vector<std::array<double, 2>> coords;  // colouring coordinates
  if (sp.name == envs::EnvName::kPlanar) {
    double lo = 1.5, hi = 40.0 - 1.5;
    for (int i = 0; i < grid_density; ++i) {
      for (int j = 0; j < grid_density; ++j) {
        double y = lo + (hi - lo) * (grid_density == 1 ? 0.5 : double(i) / (grid_density - 1));
        double x = lo + (hi - lo) * (grid_density == 1 ? 0.5 : double(j) / (grid_density - 1));
        if (!envs::planar_position_free(y, x)) continue;
        envs::UnderlyingState s(4);
        s << y, x, 37.5, 37.5;
        states.push_back(s);
        coords.push_back({y / 40.0, x / 40.0});
      }
    }
  } else {
    // angle x angular-velocity slice through the remaining coordinates
    for (int i = 0; i < grid_density; ++i) {
      for (int j = 0; j < grid_density; ++j) {
        double th = -M_PI + 2.0 * M_PI * (grid_density == 1 ? 0.5 : double(i) / (grid_density - 1));
        double w = -4.0 + 8.0 * (grid_density == 1 ? 0.5 : double(j) / (grid_density - 1));
        envs::UnderlyingState s = envs::UnderlyingState::Zero(sp.state_dim);
        s[0] = th;
        s[sp.state_dim > 2 ? sp.state_dim / 2 : 1] = w;
        states.push_back(s);
        coords.push_back({(th + M_PI) / (2.0 * M_PI), (w + 4.0) / 8.0});
      }
    }
  }

  const int n = int(states.size());
  MatF xs(sp.obs_dim(), n);
  for (int i = 0; i < n; ++i)
    xs.col(i) = envs::observe_static(env, states[std::size_t(i)]).pixels;
  MatF zs = lce.encode_means(xs);

  // project to 2-d (first two principal directions when n_z > 2)
  MatD pts(2, n);
  if (lce.arch.n_z == 2) {
    pts = zs.topRows(2).cast<double>();
  } else if (lce.arch.n_z == 1) {
    pts.row(0) = zs.row(0).cast<double>();
    pts.row(1).setZero();
  } else {
    MatD z = zs.cast<double>();
    VecD mean = z.rowwise().mean();
    MatD centered = z.colwise() - mean;
    MatD cov = centered * centered.transpose() / double(n);
    Eigen::SelfAdjointEigenSolver<MatD> eig(cov);
    MatD top = eig.eigenvectors().rightCols(2).transpose();
    pts = top * centered;
  }

  LatentMapResult res;
  res.points = n;
  res.csv_path = out_prefix + ".csv";
  res.png_path = out_prefix + ".png";
  {
    std::ofstream csv(res.csv_path);
    csv << "c0,c1,z0,z1\n";
    for (int i = 0; i < n; ++i)
      csv << coords[std::size_t(i)][0] << ',' << coords[std::size_t(i)][1] << ',' << pts(0, i)
          << ',' << pts(1, i) << '\n';
  }
  io::AxisMap ax;
  ax.height = 480;
  ax.width = 480;
  ax.x_min = pts.row(0).minCoeff();
  ax.x_max = pts.row(0).maxCoeff();
  ax.y_min = pts.row(1).minCoeff();
  ax.y_max = pts.row(1).maxCoeff();
  io::Canvas canvas(ax.height, ax.width);
  for (int i = 0; i < n; ++i) {
    auto c = coords[std::size_t(i)];
    canvas.dot(ax.py(pts(1, i)), ax.px(pts(0, i)), 2, std::uint8_t(40 + 200 * c[0]),
               std::uint8_t(40 + 200 * c[1]), 150);
  }
  canvas.save(res.png_path);
  return res;
}

void export_curves(const std::vector<std::string>& run_dirs, const std::string& out_prefix) {
  // per run: (env_samples, percent_goal) from the eval rows of metrics.csv
  std::vector<std::vector<std::pair<double, double>>> curves;
  for (const std::string& dir : run_dirs) {
    fs::path p = fs::path(dir) / "metrics.csv";
    std::ifstream is(p);
    if (!is) throw ResourceError("missing metrics file " + p.string());
    std::vector<std::pair<double, double>> curve;
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
      if (line.rfind("eval,", 0) != 0) continue;
      std::vector<std::string> cells;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      curve.emplace_back(std::stod(cells[2]), std::stod(cells.back()));
    }
    curves.push_back(std::move(curve));
  }
  std::size_t npts = curves.empty() ? 0 : curves[0].size();
  for (const auto& c : curves) npts = std::min(npts, c.size());
  if (npts == 0) throw ResourceError("no evaluation rows found in the run group");

  std::ofstream csv(out_prefix + ".csv");
  csv << "env_samples,mean,stderr,n_runs\n";
  std::vector<double> xs(npts), means(npts), ses(npts);
  for (std::size_t i = 0; i < npts; ++i) {
    double x = curves[0][i].first, sum = 0.0;
    for (const auto& c : curves) sum += c[i].second;
    double mean = sum / double(curves.size());
    double var = 0.0;
    for (const auto& c : curves) var += (c[i].second - mean) * (c[i].second - mean);
    double se = curves.size() > 1
                    ? std::sqrt(var / double(curves.size() - 1)) / std::sqrt(double(curves.size()))
                    : 0.0;
    xs[i] = x;
    means[i] = mean;
    ses[i] = se;
    csv << x << ',' << mean << ',' << se << ',' << curves.size() << '\n';
  }

  io::AxisMap ax;
  ax.x_min = xs.front();
  ax.x_max = std::max(xs.back(), xs.front() + 1.0);
  ax.y_min = 0.0;
  ax.y_max = 100.0;
  io::Canvas canvas(ax.height, ax.width);
  canvas.line(ax.py(0), ax.px(ax.x_min), ax.py(0), ax.px(ax.x_max), 0, 0, 0);
  canvas.line(ax.py(0), ax.px(ax.x_min), ax.py(100), ax.px(ax.x_min), 0, 0, 0);
  for (std::size_t i = 0; i < npts; ++i) {  // band
    int x = ax.px(xs[i]);
    canvas.line(ax.py(means[i] - ses[i]), x, ax.py(means[i] + ses[i]), x, 200, 220, 255);
  }
  for (std::size_t i = 1; i < npts; ++i)
    canvas.line(ax.py(means[i - 1]), ax.px(xs[i - 1]), ax.py(means[i]), ax.px(xs[i]), 20, 60,
                200);
  canvas.save(out_prefix + ".png");
}

}  // namespace carl::evalr
