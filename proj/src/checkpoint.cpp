#include "pno/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace pno {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

}  // namespace

void save_checkpoint(const std::string& path, const OperatorEnsemble& ens) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  f << "PNO-CKPT v1\n";
  const auto& c = ens.cfg;
  const auto& g = ens.geom;
  std::ostringstream w;
  w << "hidden =";
  for (int h : c.hidden_widths) w << ' ' << h;
  w << '\n';
  f << w.str();
  f << "activation = " << to_string(c.act.kind) << '\n';
  f << "adaptive = " << (c.act.adaptive ? 1 : 0) << '\n';
  f << "basis_count = " << c.basis_count << '\n';
  f << "lattice_kind = " << (c.lattice.full_state ? "full-state" : "positions") << '\n';
  f << "lattice_resolution = " << c.lattice.resolution << '\n';
  f << "lattice_v_resolution = " << c.lattice.v_resolution << '\n';
  f << "lattice_d_min = " << fmt(c.lattice.d_min) << '\n';
  f << "lattice_d_max = " << fmt(c.lattice.d_max) << '\n';
  f << "lattice_v_min = " << fmt(c.lattice.v_min) << '\n';
  f << "lattice_v_max = " << fmt(c.lattice.v_max) << '\n';
  f << "norm_d_min = " << fmt(c.norm.d_min) << '\n';
  f << "norm_d_max = " << fmt(c.norm.d_max) << '\n';
  f << "norm_v_min = " << fmt(c.norm.v_min) << '\n';
  f << "norm_v_max = " << fmt(c.norm.v_max) << '\n';
  f << "norm_t_max = " << fmt(c.norm.t_max) << '\n';
  f << "value_scale = " << fmt(c.norm.value_scale) << '\n';
  f << "sign_convention = " << to_string(c.sign) << '\n';
  f << "with_costate = " << (c.with_costate ? 1 : 0) << '\n';
  f << "seed = " << c.seed << '\n';
  f << "config_hash = " << ens.config_hash << '\n';
  f << "geom_road_length = " << fmt(g.road_length) << '\n';
  f << "geom_vehicle_length = " << fmt(g.vehicle_length) << '\n';
  f << "geom_vehicle_width = " << fmt(g.vehicle_width) << '\n';
  f << "geom_sigmoid_gamma = " << fmt(g.sigmoid_gamma) << '\n';
  f << "geom_penalty_scale = " << fmt(g.penalty_scale) << '\n';
  f << "geom_u_min = " << fmt(g.u_min) << '\n';
  f << "geom_u_max = " << fmt(g.u_max) << '\n';
  f << "geom_nominal_speed = " << fmt(g.nominal_speed) << '\n';
  f << "geom_terminal_position_weight = " << fmt(g.terminal_position_weight) << '\n';
  f << "geom_horizon = " << fmt(g.horizon) << '\n';
  f << "param_count = " << ens.param_count() << '\n';
  f << "---\n";
  f.write(reinterpret_cast<const char*>(ens.params.data()),
          static_cast<std::streamsize>(sizeof(double)) * ens.params.size());
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

OperatorEnsemble load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string line;
  std::getline(f, line);
  if (line != "PNO-CKPT v1") throw std::runtime_error("not a PNO-CKPT v1 file: " + path);
  std::map<std::string, std::string> kv;
  while (std::getline(f, line)) {
    if (line == "---") break;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("malformed checkpoint line: " + line);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto need = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw std::runtime_error("checkpoint missing key: " + k);
    return it->second;
  };

  GameGeometry g;
  g.road_length = parse_double(need("geom_road_length"));
  g.vehicle_length = parse_double(need("geom_vehicle_length"));
  g.vehicle_width = parse_double(need("geom_vehicle_width"));
  g.sigmoid_gamma = parse_double(need("geom_sigmoid_gamma"));
  g.penalty_scale = parse_double(need("geom_penalty_scale"));
  g.u_min = parse_double(need("geom_u_min"));
  g.u_max = parse_double(need("geom_u_max"));
  g.nominal_speed = parse_double(need("geom_nominal_speed"));
  g.terminal_position_weight = parse_double(need("geom_terminal_position_weight"));
  g.horizon = parse_double(need("geom_horizon"));

  OperatorConfig c;
  c.hidden_widths.clear();
  {
    std::istringstream hs(need("hidden"));
    int w;
    while (hs >> w) c.hidden_widths.push_back(w);
  }
  c.act.kind = activation_from_string(need("activation"));
  c.act.adaptive = need("adaptive") == "1";
  c.basis_count = std::stoi(need("basis_count"));
  c.lattice.full_state = need("lattice_kind") == "full-state";
  c.lattice.resolution = std::stoi(need("lattice_resolution"));
  c.lattice.v_resolution = std::stoi(need("lattice_v_resolution"));
  c.lattice.d_min = parse_double(need("lattice_d_min"));
  c.lattice.d_max = parse_double(need("lattice_d_max"));
  c.lattice.v_min = parse_double(need("lattice_v_min"));
  c.lattice.v_max = parse_double(need("lattice_v_max"));
  c.norm.d_min = parse_double(need("norm_d_min"));
  c.norm.d_max = parse_double(need("norm_d_max"));
  c.norm.v_min = parse_double(need("norm_v_min"));
  c.norm.v_max = parse_double(need("norm_v_max"));
  c.norm.t_max = parse_double(need("norm_t_max"));
  c.norm.value_scale = parse_double(need("value_scale"));
  c.sign = sign_convention_from_string(need("sign_convention"));
  c.with_costate = need("with_costate") == "1";
  c.seed = std::stoull(need("seed"));

  OperatorEnsemble ens = make_ensemble(g, c);
  ens.config_hash = std::stoull(need("config_hash"));
  const int n = std::stoi(need("param_count"));
  if (n != ens.param_count())
    throw std::runtime_error("checkpoint parameter count does not match its descriptor");
  f.read(reinterpret_cast<char*>(ens.params.data()),
         static_cast<std::streamsize>(sizeof(double)) * n);
  if (f.gcount() != static_cast<std::streamsize>(sizeof(double)) * n)
    throw std::runtime_error("checkpoint truncated: " + path);
  return ens;
}

}  // namespace pno
