#pragma once

// JSON and CSV persistence. Matrices are stored as arrays of rows. Doubles go
// through nlohmann::json, whose shortest round-trip formatting makes
// checkpoints bit-exact on reload.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rematch/flow_lab.hpp"
#include "rematch/recon_model.hpp"

namespace rematch {

using Json = nlohmann::json;

inline Json to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Json vector_to_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

/// `cols` fixes the width of an empty array.
inline Matrix matrix_from_json(const Json& j, Eigen::Index cols = -1) {
  if (!j.is_array()) throw InvalidArgument("matrix: expected an array of rows");
  if (j.empty()) return Matrix::Zero(0, cols < 0 ? 0 : cols);
  const auto c = static_cast<Eigen::Index>(j.front().size());
  Matrix m(static_cast<Eigen::Index>(j.size()), c);
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_array() || static_cast<Eigen::Index>(j[i].size()) != c)
      throw InvalidArgument("matrix: ragged rows");
    for (std::size_t k = 0; k < j[i].size(); ++k)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = j[i][k].get<double>();
  }
  return m;
}

inline Vector vector_from_json(const Json& j) {
  if (!j.is_array()) throw InvalidArgument("vector: expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

inline Json to_json(const VelocityFieldSpec& v) {
  return std::visit(
      [&](const auto& k) -> Json {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, ConstantField>) {
          return {{"kind", "constant"}, {"c", vector_to_json(k.c)}};
        } else if constexpr (std::is_same_v<T, RigidField>) {
          return {{"kind", "rigid"},
                  {"vech_a", vector_to_json(k.params.vech_a)},
                  {"b", vector_to_json(k.params.b)}};
        } else if constexpr (std::is_same_v<T, DivFreeComboField>) {
          return {{"kind", "divfree"},
                  {"dim", v.dim()},
                  {"frequencies", k.frequencies},
                  {"beta", vector_to_json(k.beta)}};
        } else {
          throw InvalidArgument("custom velocity fields cannot be serialized");
        }
      },
      v.kind());
}

inline VelocityFieldSpec velocity_from_json(const Json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "constant") return VelocityFieldSpec::constant(vector_from_json(j.at("c")));
  if (kind == "rigid") {
    const Vector b = vector_from_json(j.at("b"));
    const int d = static_cast<int>(b.size());
    if (d != 2 && d != 3) throw UnsupportedDimension(d);
    const Vector va = vector_from_json(j.at("vech_a"));
    if (va.size() != skew_size(d)) throw InvalidArgument("rigid field: vech_a has wrong length");
    return VelocityFieldSpec::rigid(SkewParams{d, va, b});
  }
  if (kind == "divfree")
    return VelocityFieldSpec::divfree_combo(j.at("frequencies").get<std::vector<Frequency>>(),
                                            vector_from_json(j.at("beta")),
                                            j.at("dim").get<int>());
  throw InvalidArgument("unknown velocity field kind '" + kind + "'");
}

inline Json to_json(const Scene& s) {
  Json gens = Json::array();
  for (const auto& g : s.generators) gens.push_back(to_json(g));
  return {{"name", s.name},
          {"kind", s.kind},
          {"d", s.dim()},
          {"n", s.size()},
          {"seed", s.seed},
          {"initial_positions", to_json(s.initial_positions)},
          {"generators", gens},
          {"part_labels", s.part_labels},
          {"observation_times", s.observation_times}};
}

inline Scene scene_from_json(const Json& j) {
  Scene s;
  s.name = j.at("name").get<std::string>();
  s.kind = j.at("kind").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.initial_positions = matrix_from_json(j.at("initial_positions"));
  for (const auto& g : j.at("generators")) s.generators.push_back(velocity_from_json(g));
  s.part_labels = j.at("part_labels").get<std::vector<int>>();
  s.observation_times = j.at("observation_times").get<std::vector<double>>();
  if (j.contains("d") && j.at("d").get<int>() != s.dim())
    throw InvalidArgument("scene: 'd' disagrees with initial_positions");
  if (j.contains("n") && j.at("n").get<Eigen::Index>() != s.size())
    throw InvalidArgument("scene: 'n' disagrees with initial_positions");
  s.validate();
  return s;
}

inline Json to_json(const ReconModel& m) {
  return {{"basis", {{"kind", to_string(m.basis.kind)}, {"order", m.basis.order}}},
          {"weight_order", m.weight_order},
          {"k", m.k},
          {"base", to_json(m.base)},
          {"theta", to_json(m.theta)},
          {"logits", to_json(m.logits)}};
}

inline ReconModel model_from_json(const Json& j) {
  ReconModel m;
  m.basis.kind = parse_time_basis_kind(j.at("basis").at("kind").get<std::string>());
  m.basis.order = j.at("basis").at("order").get<int>();
  m.weight_order = j.at("weight_order").get<int>();
  m.k = j.at("k").get<int>();
  m.base = matrix_from_json(j.at("base"));
  m.theta = matrix_from_json(j.at("theta"));
  m.logits = matrix_from_json(j.at("logits"));
  m.validate();
  return m;
}

inline Json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open '" + p.string() + "' for reading");
  return Json::parse(in);
}

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + p.string() + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("write to '" + p.string() + "' failed");
}

inline void write_json_file(const std::filesystem::path& p, const Json& j) {
  write_text_file(p, j.dump(2) + "\n");
}

/// Header: time,particle,x0..x{d-1}.
inline void write_observations_csv(std::ostream& os, const std::vector<Observation>& obs) {
  os.precision(17);
  const Eigen::Index d = obs.empty() ? 0 : obs.front().positions.cols();
  os << "time,particle";
  for (Eigen::Index c = 0; c < d; ++c) os << ",x" << c;
  os << '\n';
  for (const auto& o : obs)
    for (Eigen::Index i = 0; i < o.positions.rows(); ++i) {
      os << o.time << ',' << i;
      for (Eigen::Index c = 0; c < d; ++c) os << ',' << o.positions(i, c);
      os << '\n';
    }
}

}  // namespace rematch
