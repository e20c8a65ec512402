// SPDX-License-Identifier: Apache-2.0
#include "cstr/config.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <limits>

#include "cstr/error.hpp"
#include "cstr/io.hpp"

namespace cstr {

const char* to_string(CepStrategy s) noexcept {
  switch (s) {
    case CepStrategy::kM1: return "M1";
    case CepStrategy::kM2: return "M2";
    case CepStrategy::kM3: return "M3";
  }
  return "?";
}

const char* to_string(MatchConvention c) noexcept {
  return c == MatchConvention::kLeftNotRight ? "left_not_right" : "right_not_left";
}

namespace {

[[noreturn]] void config_error(const std::string& what) { fail(ErrorKind::kConfig, what); }

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T v{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    config_error("unparsable value '" + std::string(value) + "' for key '" + std::string(key) + "'");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) config_error("non-finite value for key '" + std::string(key) + "'");
  }
  return v;
}

int parse_int(std::string_view key, std::string_view value) {
  return parse_number<int>(key, value);
}

int parse_mmp_factor(std::string_view value) {
  static constexpr std::array<std::pair<std::string_view, int>, 6> kForms = {{
      {"1/2", 2}, {"1/4", 4}, {"1/8", 8}, {"0.5", 2}, {"0.25", 4}, {"0.125", 8},
  }};
  for (const auto& [text, factor] : kForms) {
    if (value == text) return factor;
  }
  config_error("mmp_scale must be one of 1/2, 1/4, 1/8, got '" + std::string(value) + "'");
}

}  // namespace

void RunConfig::validate() const {
  if (layers < 1) config_error("layers must be at least 1");
  if (channels < 1) config_error("channels must be positive");
  if (heads < 1) config_error("heads must be positive");
  if (channels % heads != 0) {
    config_error("channels (" + std::to_string(channels) + ") not divisible by heads (" +
                 std::to_string(heads) + ")");
  }
  if (mmp_factor != 2 && mmp_factor != 4 && mmp_factor != 8) {
    config_error("mmp_scale must be 1/2, 1/4 or 1/8");
  }
  if (cep_width_factor < 1) config_error("cep_width_factor must be at least 1");
  if (sinkhorn_iters < 1) config_error("sinkhorn_iters must be at least 1");
  if (!(sinkhorn_epsilon > 0.0) || !std::isfinite(sinkhorn_epsilon)) {
    config_error("sinkhorn_epsilon must be positive and finite");
  }
  if (!std::isfinite(dustbin_cost)) config_error("dustbin_cost must be finite");
  for (double w : {w1, w2, w3, w4}) {
    if (!std::isfinite(w)) config_error("loss weights must be finite");
  }
  if (rel_span < 1) config_error("rel_span must be at least 1");
}

RunConfig parse_config(std::string_view text) {
  if (!is_valid_utf8(text)) config_error("config text is not valid UTF-8");
  RunConfig cfg;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      config_error("line " + std::to_string(line_no) + ": expected key=value");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (value.empty()) config_error("line " + std::to_string(line_no) + ": empty value for '" + std::string(key) + "'");

    if (key == "layers") cfg.layers = parse_int(key, value);
    else if (key == "channels") cfg.channels = parse_int(key, value);
    else if (key == "heads") cfg.heads = parse_int(key, value);
    else if (key == "mmp_scale") cfg.mmp_factor = parse_mmp_factor(value);
    else if (key == "cep_strategy") {
      if (value == "M1") cfg.cep_strategy = CepStrategy::kM1;
      else if (value == "M2") cfg.cep_strategy = CepStrategy::kM2;
      else if (value == "M3") cfg.cep_strategy = CepStrategy::kM3;
      else config_error("cep_strategy must be M1, M2 or M3, got '" + std::string(value) + "'");
    }
    else if (key == "cep_width_factor") cfg.cep_width_factor = parse_int(key, value);
    else if (key == "sinkhorn_iters") cfg.sinkhorn_iters = parse_int(key, value);
    else if (key == "sinkhorn_epsilon") cfg.sinkhorn_epsilon = parse_number<double>(key, value);
    else if (key == "dustbin_cost") cfg.dustbin_cost = parse_number<double>(key, value);
    else if (key == "w1") cfg.w1 = parse_number<double>(key, value);
    else if (key == "w2") cfg.w2 = parse_number<double>(key, value);
    else if (key == "w3") cfg.w3 = parse_number<double>(key, value);
    else if (key == "w4") cfg.w4 = parse_number<double>(key, value);
    else if (key == "seed") cfg.seed = parse_number<long long>(key, value);
    else if (key == "rel_span") cfg.rel_span = parse_int(key, value);
    else if (key == "match_convention") {
      if (value == "left_not_right") cfg.match_convention = MatchConvention::kLeftNotRight;
      else if (value == "right_not_left") cfg.match_convention = MatchConvention::kRightNotLeft;
      else config_error("match_convention must be left_not_right or right_not_left");
    }
    else config_error("line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  try {
    return parse_config(read_file_bytes(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kIo) throw;
    throw e.with_context(path);
  }
}

namespace {

std::string format_real(double v) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

}  // namespace

std::string to_config_text(const RunConfig& c) {
  std::string out;
  auto kv = [&out](const char* key, const std::string& value) {
    out += key;
    out += '=';
    out += value;
    out += '\n';
  };
  kv("layers", std::to_string(c.layers));
  kv("channels", std::to_string(c.channels));
  kv("heads", std::to_string(c.heads));
  kv("mmp_scale", "1/" + std::to_string(c.mmp_factor));
  kv("cep_strategy", to_string(c.cep_strategy));
  kv("cep_width_factor", std::to_string(c.cep_width_factor));
  kv("sinkhorn_iters", std::to_string(c.sinkhorn_iters));
  kv("sinkhorn_epsilon", format_real(c.sinkhorn_epsilon));
  kv("dustbin_cost", format_real(c.dustbin_cost));
  kv("w1", format_real(c.w1));
  kv("w2", format_real(c.w2));
  kv("w3", format_real(c.w3));
  kv("w4", format_real(c.w4));
  kv("seed", std::to_string(c.seed));
  kv("rel_span", std::to_string(c.rel_span));
  kv("match_convention", to_string(c.match_convention));
  return out;
}

}  // namespace cstr
