#include "carl/envs/dataset.hpp"

#include "nlohmann/json.hpp"

#include <filesystem>
#include <fstream>

namespace carl::envs {

namespace fs = std::filesystem;
using nlohmann::json;

SampleMode sample_mode_from_string(const std::string& s) {
  if (s == "uniform") return SampleMode::kUniform;
  if (s == "biased") return SampleMode::kBiased;
  throw ConfigError("unknown sample mode: " + s);
}

std::string to_string(SampleMode m) {
  return m == SampleMode::kUniform ? "uniform" : "biased";
}

Observation with_goal(const Observation& x, const Observation& goal) {
  Observation out;
  out.pixels = x.pixels;
  out.goal_pixels = goal.pixels;
  return out;
}

static Triplet make_triplet(const Env& env, const UnderlyingState& s, const VecF& a) {
  Triplet t;
  UnderlyingState next = env.step_state(s, a);
  t.x = observe(env, env.backstep(s), s);
  t.a = a;
  t.x_next = observe(env, s, next);
  t.x_goal = observe_static(env, env.goal_state_for(s));
  return t;
}

std::vector<Triplet> sample_dataset(const Env& env, int n, SampleMode mode, double p, Rng& rng,
                                    StepCounter* counter, std::size_t memory_cap_bytes) {
  if (n <= 0) throw InputError("sample_dataset: n must be positive");
  if (p < 0.0 || p > 1.0) throw InputError("sample_dataset: p must lie in [0,1]");
  const EnvSpec& sp = env.spec();
  std::size_t per = std::size_t(3 * sp.obs_dim() + sp.action_dim) * sizeof(float) + 64;
  if (per * std::size_t(n) > memory_cap_bytes)
    throw ResourceError("dataset of " + std::to_string(n) + " triplets exceeds the memory cap");

  std::vector<Triplet> out;
  out.reserve(std::size_t(n));
  for (int i = 0; i < n; ++i) {
    UnderlyingState s;
    if (mode == SampleMode::kUniform) {
      s = env.sample_uniform_state(rng);
    } else {
      s = rng.uniform() < p ? env.sample_biased_state(rng) : env.sample_complement_state(rng);
    }
    VecF a(sp.action_dim);
    for (int d = 0; d < sp.action_dim; ++d)
      a[d] = float(rng.uniform(double(sp.action_low[d]), double(sp.action_high[d])));
    out.push_back(make_triplet(env, s, a));
    if (counter) ++counter->steps;
  }
  return out;
}

std::vector<Triplet> sample_dataset(const Env& env, int n, SampleMode mode, double p) {
  Rng rng = Rng::substream(env.seed(), "dataset");
  return sample_dataset(env, n, mode, p, rng);
}

std::vector<Triplet> collect_with_policy(const Env& env, const ActFn& act_fn, int n, Rng& rng,
                                         StepCounter* counter) {
  std::vector<Triplet> out;
  out.reserve(std::size_t(n));
  const EnvSpec& sp = env.spec();
  while (int(out.size()) < n) {
    UnderlyingState s = env.initial_state(rng);
    Observation goal = observe_static(env, env.goal_state_for(s));
    UnderlyingState prev = s;  // at reset both stacked frames are the initial render
    for (int t = 0; t < sp.horizon && int(out.size()) < n; ++t) {
      Observation x = observe(env, prev, s);
      VecF a = act_fn(with_goal(x, goal));
      for (int d = 0; d < a.size(); ++d)
        if (!std::isfinite(double(a[d])))
          throw InputError("policy emitted a non-finite action at step " + std::to_string(t));
      StepOutput so = step(env, s, a, counter);
      Triplet trip;
      trip.x = x;
      trip.a = clip_action(sp, a, nullptr);
      trip.x_next = so.obs;
      trip.x_goal = goal;
      out.push_back(std::move(trip));
      prev = s;
      s = so.next;
    }
  }
  return out;
}

namespace {

void write_vecf(std::ofstream& os, const VecF& v) {
  std::uint32_t n = std::uint32_t(v.size());
  os.write(reinterpret_cast<const char*>(&n), sizeof(n));
  os.write(reinterpret_cast<const char*>(v.data()), std::streamsize(n * sizeof(float)));
}

VecF read_vecf(std::ifstream& is) {
  std::uint32_t n = 0;
  is.read(reinterpret_cast<char*>(&n), sizeof(n));
  VecF v(n);
  is.read(reinterpret_cast<char*>(v.data()), std::streamsize(n * sizeof(float)));
  if (!is) throw IntegrityError("truncated dataset record");
  return v;
}

}  // namespace

void save_dataset(const std::string& dir, const Env& env, const std::vector<Triplet>& data,
                  SampleMode mode, double p) {
  fs::create_directories(dir);
  json manifest;
  manifest["env"] = to_string(env.spec().name);
  manifest["seed"] = env.seed();
  manifest["mode"] = to_string(mode);
  manifest["p"] = p;
  manifest["n"] = data.size();
  manifest["dt"] = env.spec().dt;
  std::ofstream mf(fs::path(dir) / "manifest.json");
  mf << manifest.dump(2) << '\n';

  std::ofstream os(fs::path(dir) / "triplets.bin", std::ios::binary);
  if (!os) throw ResourceError("cannot open dataset file for writing in " + dir);
  std::uint64_t n = data.size();
  os.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (const Triplet& t : data) {
    write_vecf(os, t.x.pixels);
    write_vecf(os, t.a);
    write_vecf(os, t.x_next.pixels);
    write_vecf(os, t.x_goal.pixels);
  }
}

std::vector<Triplet> load_dataset(const std::string& dir, std::string* env_name) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw IntegrityError("missing manifest.json in " + dir);
  json manifest = json::parse(mf);
  if (env_name) *env_name = manifest.at("env").get<std::string>();

  std::ifstream is(fs::path(dir) / "triplets.bin", std::ios::binary);
  if (!is) throw IntegrityError("missing triplets.bin in " + dir);
  std::uint64_t n = 0;
  is.read(reinterpret_cast<char*>(&n), sizeof(n));
  std::vector<Triplet> out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    Triplet t;
    t.x.pixels = read_vecf(is);
    t.a = read_vecf(is);
    t.x_next.pixels = read_vecf(is);
    t.x_goal.pixels = read_vecf(is);
    out.push_back(std::move(t));
  }
  if (out.size() != manifest.at("n").get<std::uint64_t>())
    throw IntegrityError("dataset record count disagrees with manifest");
  return out;
}

}  // namespace carl::envs
