#include "dpsr/profiler.hpp"

#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

namespace dpsr {

namespace {

constexpr double kTableParams = 2.71e6;
constexpr double kTableFlopsPerPx = 31e3;

std::uint64_t numel(const Shape& s) { return shape_numel(s); }

// "clff0.naf.pw1_w" -> "clff0.naf", "sfe.conv_w" -> "sfe".
std::string block_of(const std::string& name) {
  const auto first = name.find('.');
  if (name.rfind("clff", 0) == 0) return name.substr(0, name.find('.', first + 1));
  return name.substr(0, first);
}

}  // namespace

CostReport profile(const DpsrConfig& config_in, std::uint64_t W, std::uint32_t bands) {
  DpsrConfig cfg = config_in;
  cfg.bands = bands;
  cfg.validate();
  const std::uint64_t C = bands, F = cfg.features, EF = cfg.expanded(), N = cfg.state_size, K = cfg.conv_kernel,
                      f = cfg.up_features, r = cfg.scale, h = attention_hidden(cfg.features);

  // Parameters come straight from the serialized layout, grouped by block.
  std::map<std::string, std::uint64_t> params;
  for (const auto& [name, shape] : param_shapes(cfg)) {
    params[block_of(name)] += numel(shape);
  }

  CostReport rep;
  rep.config = cfg;
  rep.width = W;
  rep.items.push_back({"sfe", params["sfe"],
                       W * F * C * 3 /* conv */ + 2 * (h * F + F * h) /* shared MLP on avg and max */});
  for (std::uint32_t i = 0; i < cfg.n_clff; ++i) {
    const std::string p = "clff" + std::to_string(i);
    const std::uint64_t naf = W * 2 * F * F  /* pw1 */ + W * 2 * F * 3 /* dw */ + F * F /* sca */ +
                              W * F * F /* pw2 */ + W * 2 * F * F /* pw3 */ + W * F * F /* pw4 */;
    rep.items.push_back({p + ".naf", params[p + ".naf"], naf});
    std::uint64_t mem = 2 * W * EF * F /* in_x, in_z */ + W * EF * K /* causal conv */ + W * F * EF /* out */;
    if (cfg.memory_kind == MemoryKind::mamba) {
      mem += W * EF * EF /* dt */ + 2 * W * N * EF /* B, C */ + 3 * W * EF * N /* discretize, update, readout */ +
             W * EF /* D skip */;
    }
    rep.items.push_back({p + ".mem", params[p + ".mem"], mem});
  }
  rep.items.push_back(
      {"up", params["up"], W * f * r * r * F * 3 /* expand */ + r * r * W * C * f * 3 /* restore per HR line */});

  for (const auto& it : rep.items) {
    rep.param_count += it.params;
    rep.flops_per_line += 2 * it.macs_per_line;
  }
  rep.flops_per_input_pixel = W ? static_cast<double>(rep.flops_per_line) / static_cast<double>(W) : 0.0;
  rep.flops_per_input_sample =
      W && C ? static_cast<double>(rep.flops_per_line) / static_cast<double>(W * C) : 0.0;
  rep.state = account_state_bytes(cfg, W);
  return rep;
}

std::string format_cost_report(const CostReport& rep) {
  std::ostringstream os;
  os << "block            params      MACs/line\n";
  for (const auto& it : rep.items) {
    os << std::left << std::setw(14) << it.name << std::right << std::setw(10) << it.params << std::setw(15)
       << it.macs_per_line << '\n';
  }
  os << "total params     " << rep.param_count << '\n'
     << "FLOPs/line       " << rep.flops_per_line << " (W=" << rep.width << ")\n"
     << std::fixed << std::setprecision(1) << "FLOPs/px         " << rep.flops_per_input_pixel
     << " (per LR spatial pixel)\n"
     << "FLOPs/sample     " << rep.flops_per_input_sample << " (per LR pixel and band)\n"
     << "state memory:\n";
  for (const auto& it : rep.state.items) os << "  " << std::left << std::setw(22) << it.name << it.bytes << " B\n";
  os << "  total                 " << rep.state.total() << " B\n";
  return os.str();
}

std::string table1_comparison(const CostReport& rep) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  const double p = static_cast<double>(rep.param_count);
  os << "Table I comparison (DPSR, r=4, C=202)\n"
     << "  params       " << std::setprecision(2) << p / 1e6 << std::setprecision(1) << " M vs 2.71 M  (" << std::showpos << 100.0 * (p / kTableParams - 1.0)
     << std::noshowpos << "%)\n"
     << "  FLOPs/sample " << rep.flops_per_input_sample / 1e3 << " K vs 31 K  (" << std::showpos
     << 100.0 * (rep.flops_per_input_sample / kTableFlopsPerPx - 1.0) << std::noshowpos << "%)\n"
     << "  FLOPs/pixel  " << rep.flops_per_input_pixel / 1e3 << " K (spatial-pixel reading)\n"
     << "  The published FLOPs/px only fits a per-sample denominator: with ~2.7 M weights\n"
     << "  applied across a whole line, every spatial pixel costs millions of FLOPs.\n"
     << "  Residual parameter gap is in block internals the paper leaves open\n"
     << "  (NAF expansion 2x, attention reduction 16, upsampler kernel 3).\n";
  return os.str();
}

std::string cost_csv_header() {
  return "C,F,E,N,K,f,r,n_clff,memory,width,params,flops_per_line,flops_per_pixel,flops_per_sample,state_bytes";
}

std::string cost_csv_row(const CostReport& rep) {
  const DpsrConfig& c = rep.config;
  std::ostringstream os;
  os.precision(10);
  os << c.bands << ',' << c.features << ',' << c.expansion << ',' << c.state_size << ',' << c.conv_kernel << ','
     << c.up_features << ',' << c.scale << ',' << c.n_clff << ',' << to_string(c.memory_kind) << ',' << rep.width
     << ',' << rep.param_count << ',' << rep.flops_per_line << ',' << rep.flops_per_input_pixel << ','
     << rep.flops_per_input_sample << ',' << rep.state.total();
  return os.str();
}

}  // namespace dpsr
