#include "mesm/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace mesm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string format(int v) { return std::to_string(v); }
std::string format(std::uint64_t v) { return std::to_string(v); }
std::string format(bool v) { return v ? "true" : "false"; }
std::string format(MlmScope v) { return v == MlmScope::kAllWords ? "all_words" : "masked_only"; }
std::string format(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void parse_into(const std::string& key, const std::string& text, int& out) {
  std::size_t used = 0;
  try {
    out = std::stoi(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty()) throw ConfigError("config key '" + key + "': expected integer, got '" + text + "'");
}

void parse_into(const std::string& key, const std::string& text, std::uint64_t& out) {
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
    throw ConfigError("config key '" + key + "': expected unsigned integer, got '" + text + "'");
}

void parse_into(const std::string& key, const std::string& text, double& out) {
  std::size_t used = 0;
  try {
    out = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty()) throw ConfigError("config key '" + key + "': expected number, got '" + text + "'");
}

void parse_into(const std::string& key, const std::string& text, bool& out) {
  if (text == "true" || text == "1" || text == "on") {
    out = true;
  } else if (text == "false" || text == "0" || text == "off") {
    out = false;
  } else {
    throw ConfigError("config key '" + key + "': expected boolean, got '" + text + "'");
  }
}

void parse_into(const std::string& key, const std::string& text, MlmScope& out) {
  if (text == "all_words") {
    out = MlmScope::kAllWords;
  } else if (text == "masked_only") {
    out = MlmScope::kMaskedOnly;
  } else {
    throw ConfigError("config key '" + key + "': expected all_words or masked_only, got '" + text + "'");
  }
}

template <typename Config, typename F>
void visit_fields(Config& c, F&& f) {
  f("hidden_dim", c.hidden_dim);
  f("heads", c.heads);
  f("ffn_dim", c.ffn_dim);
  f("dropout", c.dropout);
  f("fw_layers", c.fw_layers);
  f("ss_layers", c.ss_layers);
  f("ma_layers", c.ma_layers);
  f("enc_layers", c.enc_layers);
  f("dec_layers", c.dec_layers);
  f("num_spans", c.num_spans);
  f("use_fw", c.use_fw);
  f("use_ss", c.use_ss);
  f("use_mlm", c.use_mlm);
  f("positional_encoding", c.positional_encoding);
  f("mask_ratio", c.mask_ratio);
  f("mlm_scope", c.mlm_scope);
  f("gamma", c.gamma);
  f("tau", c.tau);
  f("normalize_similarity", c.normalize_similarity);
  f("mean_over_tokens", c.mean_over_tokens);
  f("cross_video_positives", c.cross_video_positives);
  f("ss_context_grad", c.ss_context_grad);
  f("lambda_l1", c.lambda_l1);
  f("lambda_iou", c.lambda_iou);
  f("lambda_ce", c.lambda_ce);
  f("w_bg", c.w_bg);
  f("lambda_fw", c.lambda_fw);
  f("lambda_ss", c.lambda_ss);
  f("lambda_enc", c.lambda_enc);
  f("deep_supervision", c.deep_supervision);
  f("lr", c.lr);
  f("weight_decay", c.weight_decay);
  f("beta1", c.beta1);
  f("beta2", c.beta2);
  f("adam_eps", c.adam_eps);
  f("grad_clip", c.grad_clip);
  f("batch_size", c.batch_size);
  f("epochs", c.epochs);
  f("max_steps", c.max_steps);
  f("eval_every", c.eval_every);
  f("seed", c.seed);
}

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("invalid config: " + m); };
  if (hidden_dim < 2 || hidden_dim % 2 != 0) fail("hidden_dim must be even and >= 2");
  if (heads < 1 || hidden_dim % heads != 0) fail("hidden_dim must be divisible by heads");
  if (ffn_dim < 1) fail("ffn_dim must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
  if (fw_layers < 0 || ss_layers < 0 || ma_layers < 0 || enc_layers < 0) fail("layer counts must be >= 0");
  if (dec_layers < 1) fail("dec_layers must be >= 1");
  if (num_spans < 1) fail("num_spans must be >= 1");
  if (mask_ratio <= 0.0 || mask_ratio > 1.0) fail("mask_ratio must lie in (0, 1]");
  if (gamma < 0.0 || gamma > 1.0) fail("gamma must lie in [0, 1]");
  if (!(tau > 0.0)) fail("tau must be > 0");
  if (lambda_l1 < 0 || lambda_iou < 0 || lambda_ce < 0 || w_bg < 0 || lambda_fw < 0 || lambda_ss < 0 || lambda_enc < 0)
    fail("loss weights must be >= 0");
  if (!(lr > 0.0)) fail("lr must be > 0");
  if (weight_decay < 0.0) fail("weight_decay must be >= 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) fail("Adam betas must lie in [0, 1)");
  if (grad_clip < 0.0) fail("grad_clip must be >= 0 (0 disables)");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (epochs < 1) fail("epochs must be >= 1");
  if (max_steps < 0) fail("max_steps must be >= 0");
  if (eval_every < 1) fail("eval_every must be >= 1");
}

void RunConfig::set(const std::string& key, const std::string& value) {
  bool found = false;
  const std::string v = trim(value);
  visit_fields(*this, [&](const char* name, auto& field) {
    if (key == name) {
      parse_into(key, v, field);
      found = true;
    }
  });
  if (!found) throw ConfigError("unknown config key '" + key + "'");
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  visit_fields(*this, [&](const char* name, const auto& field) { os << name << " = " << format(field) << "\n"; });
  return os.str();
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.resize(hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write config file: " + path.string());
  out << serialize();
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string RunConfig::hash() const { return fnv1a_hex(serialize()); }

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  RunConfig copy = *this;
  visit_fields(copy, [&](const char* name, auto&) { out.emplace_back(name); });
  return out;
}

RunConfig ablate(const RunConfig& base, const std::vector<std::string>& switches) {
  RunConfig c = base;
  for (const auto& sw : switches) {
    const auto eq = sw.find('=');
    if (eq == std::string::npos) {
      if (sw == "fw_off") {
        c.use_fw = false;
      } else if (sw == "ss_off") {
        c.use_ss = false;
      } else if (sw == "enc_loss_off") {
        c.lambda_enc = 0.0;
      } else if (sw == "mlm_off") {
        c.use_mlm = false;
      } else {
        throw ConfigError("unknown ablation switch '" + sw + "'");
      }
      continue;
    }
    const std::string key = sw.substr(0, eq);
    int n = 0;
    parse_into(key, trim(sw.substr(eq + 1)), n);
    if (n < 0) throw ConfigError("ablation switch '" + sw + "': layer count must be >= 0");
    if (key == "ss_layers") {
      c.ss_layers = n;
    } else if (key == "fw_layers") {
      c.fw_layers = n;
    } else if (key == "ma_layers") {
      c.ma_layers = n;
    } else {
      throw ConfigError("unknown ablation switch '" + sw + "'");
    }
  }
  c.validate();
  return c;
}

}  // namespace mesm
