#include "dpsr/model.hpp"

#include <cmath>
#include <random>

#include "binio.hpp"

namespace dpsr {

namespace {

constexpr char kMagic[8] = {'D', 'P', 'S', 'R', 'W', '0', '0', '1'};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Upsampled network residual for every LR line: [H*r, r*W, C] with line
// group y covering rows r*y .. r*y + r - 1.
template <typename V>
V network_lines(const V& cube, const DpsrParamsT<V>& p) {
  const std::size_t h = cube.dim(0), w = cube.dim(1);
  const std::size_t r = p.config.scale;
  V z = sfe_forward(cube, p.sfe);
  for (const auto& block : p.clff) {
    z = naf_forward(z, block.naf);
    z = memory_scan(z, block.memory, p.config.memory_kind);
  }
  const V up = upsample_line(z, p.up, r);
  return reshape(up, Shape{h * r, r * w, std::size_t{p.config.bands}});
}

template <typename T>
void check_cube(const Tensor<T>& cube, const DpsrConfig& config) {
  if (cube.rank() != 3 || cube.dim(2) != config.bands) {
    throw ContractError("dpsr_forward_image: expected [H, W, " + std::to_string(config.bands) + "], got " +
                        shape_str(cube.shape()));
  }
  if (cube.dim(0) < 2) throw ContractError("dpsr_forward_image: need at least 2 lines, got " + std::to_string(cube.dim(0)));
}

}  // namespace

void DpsrConfig::validate() const {
  auto positive = [](std::uint32_t v, const char* name) {
    if (v == 0) throw ContractError(std::string("config: ") + name + " must be positive");
  };
  positive(bands, "C (bands)");
  positive(features, "F (features)");
  positive(expansion, "E (expansion)");
  positive(state_size, "N (state_size)");
  positive(conv_kernel, "K (conv_kernel)");
  positive(up_features, "f (up_features)");
  positive(scale, "r (scale)");
  positive(n_clff, "n_clff");
  if (features % 2 != 0) throw ContractError("config: F must be even for the SimpleGate, got " + std::to_string(features));
}

std::vector<std::pair<std::string, Shape>> param_shapes(const DpsrConfig& c) {
  c.validate();
  const std::size_t C = c.bands, F = c.features, EF = c.expanded(), N = c.state_size, K = c.conv_kernel;
  const std::size_t up = std::size_t{c.up_features} * c.scale * c.scale;
  const std::size_t hid = attention_hidden(F);
  std::vector<std::pair<std::string, Shape>> s;
  auto add = [&](std::string name, Shape shape) { s.emplace_back(std::move(name), std::move(shape)); };
  add("sfe.conv_w", {F, C, 3});
  add("sfe.conv_b", {F});
  add("sfe.ln_gamma", {F});
  add("sfe.ln_beta", {F});
  add("sfe.att_w1", {hid, F});
  add("sfe.att_b1", {hid});
  add("sfe.att_w2", {F, hid});
  add("sfe.att_b2", {F});
  for (std::size_t i = 0; i < c.n_clff; ++i) {
    const std::string n = "clff" + std::to_string(i) + ".naf.";
    add(n + "ln1_gamma", {F});
    add(n + "ln1_beta", {F});
    add(n + "pw1_w", {2 * F, F});
    add(n + "pw1_b", {2 * F});
    add(n + "dw_w", {2 * F, 3});
    add(n + "dw_b", {2 * F});
    add(n + "sca_w", {F, F});
    add(n + "sca_b", {F});
    add(n + "pw2_w", {F, F});
    add(n + "pw2_b", {F});
    add(n + "ln2_gamma", {F});
    add(n + "ln2_beta", {F});
    add(n + "pw3_w", {2 * F, F});
    add(n + "pw3_b", {2 * F});
    add(n + "pw4_w", {F, F});
    add(n + "pw4_b", {F});
    const std::string m = "clff" + std::to_string(i) + ".mem.";
    add(m + "in_x_w", {EF, F});
    add(m + "in_z_w", {EF, F});
    add(m + "conv_w", {EF, K});
    add(m + "conv_b", {EF});
    if (c.memory_kind == MemoryKind::mamba) {
      add(m + "dt_w", {EF, EF});
      add(m + "dt_b", {EF});
      add(m + "b_w", {N, EF});
      add(m + "c_w", {N, EF});
      add(m + "a_log", {EF, N});
      add(m + "d", {EF});
    }
    add(m + "out_w", {F, EF});
  }
  add("up.expand_w", {up, F, 3});
  add("up.expand_b", {up});
  add("up.restore_w", {C, std::size_t{c.up_features}, 3});
  add("up.restore_b", {C});
  return s;
}

DpsrParams zero_params(const DpsrConfig& config) {
  const auto shapes = param_shapes(config);
  DpsrParams p;
  p.config = config;
  p.clff.resize(config.n_clff);
  auto list = param_list(p);
  if (list.size() != shapes.size()) throw ContractError("zero_params: parameter layout mismatch");
  for (std::size_t i = 0; i < list.size(); ++i) *list[i].second = TensorF(shapes[i].second);
  return p;
}

DpsrParams init_params(const DpsrConfig& config, std::uint64_t seed) {
  DpsrParams p = zero_params(config);
  std::mt19937_64 rng(seed);
  for (auto& [name, t] : param_list(p)) {
    const Shape& s = t->shape();
    if (ends_with(name, "gamma") || ends_with(name, ".d")) {
      t->fill(1.0f);
    } else if (ends_with(name, "a_log")) {
      const std::size_t n = s[1];
      for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = std::log(static_cast<float>(i % n + 1));
    } else if (ends_with(name, "dt_b")) {
      std::uniform_real_distribution<double> dist(0.001, 0.1);
      for (auto& v : t->vec()) {
        const double dt = dist(rng);
        v = static_cast<float>(dt + std::log(-std::expm1(-dt)));  // softplus^-1
      }
    } else if (ends_with(name, "_b") || ends_with(name, "beta") || ends_with(name, "_b1") || ends_with(name, "_b2")) {
      // zeros
    } else {
      std::size_t fan_in = 1;
      for (std::size_t d = 1; d < s.size(); ++d) fan_in *= s[d];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : t->vec()) v = static_cast<float>(dist(rng));
    }
  }
  return p;
}

std::size_t param_count(const DpsrParams& p) {
  std::size_t n = 0;
  for (const auto& [name, t] : param_list(p)) n += t->size();
  return n;
}

template <typename T>
std::size_t StreamState<T>::element_count() const {
  std::size_t n = prev_line.size();
  for (const auto& m : memory) n += m.element_count();
  return n;
}

template <typename T>
std::optional<Tensor<T>> dpsr_step(const Tensor<T>& line, const DpsrParamsT<Tensor<T>>& p, StreamState<T>& s) {
  const DpsrConfig& cfg = p.config;
  if (line.rank() != 2 || line.dim(1) != cfg.bands) {
    throw ContractError("dpsr_step: expected line [W, " + std::to_string(cfg.bands) + "], got " + shape_str(line.shape()));
  }
  const std::size_t w = line.dim(0);
  if (!s.started()) {
    s.width = w;
    s.memory.clear();
    for (std::size_t i = 0; i < cfg.n_clff; ++i) {
      s.memory.push_back(
          MambaState<T>::zeros(cfg.conv_kernel, w, cfg.expanded(), cfg.state_size, cfg.memory_kind));
    }
  } else if (w != s.width) {
    throw ContractError("dpsr_step: line width " + std::to_string(w) + " differs from stream width " +
                        std::to_string(s.width));
  }

  Tensor<T> z = sfe_forward(line, p.sfe);
  for (std::size_t i = 0; i < p.clff.size(); ++i) {
    z = naf_forward(z, p.clff[i].naf);
    z = memory_step(z, p.clff[i].memory, s.memory[i], cfg.memory_kind);
  }
  const Tensor<T> up = upsample_line(z, p.up, cfg.scale);

  std::optional<Tensor<T>> out;
  if (s.started()) {
    Tensor<T> hr = add(up, bilinear_two_line(s.prev_line, line, cfg.scale));
    if (!hr.all_finite()) {
      throw NumericError("dpsr_step: non-finite output at line " + std::to_string(s.lines_consumed));
    }
    out = std::move(hr);
  }
  s.prev_line = line;
  ++s.lines_consumed;
  return out;
}

template <typename T>
Tensor<T> bilinear_image(const Tensor<T>& cube, std::size_t r) {
  const std::size_t h = cube.dim(0), w = cube.dim(1), c = cube.dim(2);
  Tensor<T> out({(h - 1) * r, r * w, c});
  const std::size_t group = r * r * w * c;
  for (std::size_t y = 1; y < h; ++y) {
    const Tensor<T> b = bilinear_two_line(slice_rows(cube, y - 1, y).reshaped({w, c}),
                                          slice_rows(cube, y, y + 1).reshaped({w, c}), r);
    std::copy(b.vec().begin(), b.vec().end(), out.vec().begin() + static_cast<std::ptrdiff_t>((y - 1) * group));
  }
  return out;
}

template <typename T>
Tensor<T> dpsr_forward_image(const Tensor<T>& cube, const DpsrParamsT<Tensor<T>>& p) {
  check_cube(cube, p.config);
  const std::size_t r = p.config.scale;
  const Tensor<T> net = network_lines(cube, p);
  return add(slice_rows(net, r, net.dim(0)), bilinear_image(cube, r));
}

template <typename T>
Var<T> dpsr_forward_image(const Tensor<T>& cube, const DpsrParamsT<Var<T>>& p, Tape<T>& tape) {
  check_cube(cube, p.config);
  const std::size_t r = p.config.scale;
  const Var<T> net = network_lines(tape.constant(cube), p);
  return add_const(slice_rows(net, r, net.dim(0)), bilinear_image(cube, r));
}

std::vector<std::uint8_t> serialize_params(const DpsrParams& p) {
  std::vector<std::uint8_t> out;
  binio::put_bytes(out, kMagic, sizeof(kMagic));
  const DpsrConfig& c = p.config;
  for (std::uint32_t v : {c.bands, c.features, c.expansion, c.state_size, c.conv_kernel, c.up_features, c.scale,
                          c.n_clff, static_cast<std::uint32_t>(c.memory_kind)}) {
    binio::put_u32(out, v);
  }
  const auto list = param_list(p);
  binio::put_u32(out, static_cast<std::uint32_t>(list.size()));
  for (const auto& [name, t] : list) {
    binio::put_u32(out, static_cast<std::uint32_t>(t->rank()));
    for (std::size_t d : t->shape()) binio::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t->data()) binio::put_f32(out, v);
  }
  return out;
}

DpsrParams deserialize_params(const std::vector<std::uint8_t>& bytes) {
  binio::Reader in(bytes, "checkpoint");
  char magic[8];
  in.bytes(magic, sizeof(magic));
  if (std::string(magic, 8) != std::string(kMagic, 8)) throw FormatError("checkpoint: bad magic (expected DPSRW001)");
  DpsrConfig c;
  c.bands = in.u32();
  c.features = in.u32();
  c.expansion = in.u32();
  c.state_size = in.u32();
  c.conv_kernel = in.u32();
  c.up_features = in.u32();
  c.scale = in.u32();
  c.n_clff = in.u32();
  const std::uint32_t kind = in.u32();
  if (kind > 1) throw FormatError("checkpoint: unknown memory kind " + std::to_string(kind));
  c.memory_kind = static_cast<MemoryKind>(kind);
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw FormatError(std::string("checkpoint: invalid config header: ") + e.what());
  }

  DpsrParams p = zero_params(c);
  auto list = param_list(p);
  const std::uint32_t count = in.u32();
  if (count != list.size()) {
    throw FormatError("checkpoint: " + std::to_string(count) + " tensors, config implies " + std::to_string(list.size()));
  }
  for (auto& [name, t] : list) {
    const std::uint32_t rank = in.u32();
    Shape shape(rank);
    for (auto& d : shape) d = in.u32();
    if (shape != t->shape()) {
      throw FormatError("checkpoint: tensor " + name + " has shape " + shape_str(shape) + ", config implies " +
                        shape_str(t->shape()));
    }
    in.need(4 * t->size());
    for (auto& v : t->vec()) v = in.f32();
  }
  if (in.remaining() != 0) throw FormatError("checkpoint: " + std::to_string(in.remaining()) + " trailing bytes");
  return p;
}

void save_params(const std::filesystem::path& path, const DpsrParams& p) {
  binio::write_file(path, serialize_params(p));
}

DpsrParams load_params(const std::filesystem::path& path) { return deserialize_params(binio::read_file(path)); }

template struct StreamState<float>;
template struct StreamState<double>;
template std::optional<Tensor<float>> dpsr_step(const Tensor<float>&, const DpsrParamsT<Tensor<float>>&,
                                                StreamState<float>&);
template std::optional<Tensor<double>> dpsr_step(const Tensor<double>&, const DpsrParamsT<Tensor<double>>&,
                                                 StreamState<double>&);
template Tensor<float> bilinear_image(const Tensor<float>&, std::size_t);
template Tensor<double> bilinear_image(const Tensor<double>&, std::size_t);
template Tensor<float> dpsr_forward_image(const Tensor<float>&, const DpsrParamsT<Tensor<float>>&);
template Tensor<double> dpsr_forward_image(const Tensor<double>&, const DpsrParamsT<Tensor<double>>&);
template Var<float> dpsr_forward_image(const Tensor<float>&, const DpsrParamsT<Var<float>>&, Tape<float>&);
template Var<double> dpsr_forward_image(const Tensor<double>&, const DpsrParamsT<Var<double>>&, Tape<double>&);

}  // namespace dpsr
