#pragma once

#include "carl/nn.hpp"

#include "nlohmann/json.hpp"

#include <fstream>
#include <string>

namespace carl::io {

// Raw parameter blobs keyed by network name, with a JSON manifest describing
// shapes. Round-trips are bit-exact: values (and optionally Adam moments) are
// written as native scalars.
template <class S>
void save_param_store(const nn::ParamStore<S>& ps, const std::string& bin_path,
                      nlohmann::json& manifest, bool with_opt) {
  std::ofstream os(bin_path, std::ios::binary);
  if (!os) throw ResourceError("cannot write " + bin_path);
  manifest["with_opt"] = with_opt;
  manifest["scalar_bytes"] = sizeof(S);
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : ps.entries()) {
    entries.push_back({{"name", e.name}, {"rows", e.value.rows()}, {"cols", e.value.cols()}});
    os.write(reinterpret_cast<const char*>(e.value.data()),
             std::streamsize(sizeof(S) * std::size_t(e.value.size())));
    if (with_opt) {
      os.write(reinterpret_cast<const char*>(e.m.data()),
               std::streamsize(sizeof(S) * std::size_t(e.m.size())));
      os.write(reinterpret_cast<const char*>(e.v.data()),
               std::streamsize(sizeof(S) * std::size_t(e.v.size())));
    }
  }
  manifest["entries"] = std::move(entries);
}

template <class S>
void load_param_store(nn::ParamStore<S>& ps, const std::string& bin_path,
                      const nlohmann::json& manifest) {
  if (manifest.at("scalar_bytes").get<std::size_t>() != sizeof(S))
    throw IntegrityError("checkpoint scalar width mismatch in " + bin_path);
  bool with_opt = manifest.at("with_opt").get<bool>();
  const auto& entries = manifest.at("entries");
  if (int(entries.size()) != ps.size())
    throw IntegrityError("checkpoint entry count mismatch in " + bin_path);
  std::ifstream is(bin_path, std::ios::binary);
  if (!is) throw IntegrityError("missing checkpoint blob " + bin_path);
  for (int i = 0; i < ps.size(); ++i) {
    auto& e = ps.at(i);
    const auto& je = entries[std::size_t(i)];
    if (je.at("name").get<std::string>() != e.name ||
        je.at("rows").get<Eigen::Index>() != e.value.rows() ||
        je.at("cols").get<Eigen::Index>() != e.value.cols())
      throw IntegrityError("checkpoint entry " + e.name + " does not match the architecture");
    is.read(reinterpret_cast<char*>(e.value.data()),
            std::streamsize(sizeof(S) * std::size_t(e.value.size())));
    if (with_opt) {
      is.read(reinterpret_cast<char*>(e.m.data()),
              std::streamsize(sizeof(S) * std::size_t(e.m.size())));
      is.read(reinterpret_cast<char*>(e.v.data()),
              std::streamsize(sizeof(S) * std::size_t(e.v.size())));
    }
  }
  if (!is) throw IntegrityError("truncated checkpoint blob " + bin_path);
}

}  // namespace carl::io
