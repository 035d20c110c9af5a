#include "dpcn/data/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace dpcn::data {

namespace {

constexpr const char* kTag = "DPCN-CHECKPOINT";

void put_float(std::string& out, float v) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

float get_float(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

// Length-prefixed text block: "<label> <bytes>\n<bytes>\n".
void put_block(std::string& out, const std::string& label, const std::string& text) {
  out += label + " " + std::to_string(text.size()) + "\n" + text + "\n";
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

  std::string line() {
    const auto end = bytes_.find('\n', pos_);
    if (end == std::string::npos) fail("unexpected end of file");
    std::string out = bytes_.substr(pos_, end - pos_);
    pos_ = end + 1;
    return out;
  }

  std::string take(std::size_t n) {
    if (pos_ + n > bytes_.size()) fail("truncated payload");
    std::string out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  // Reads "<label> <n>" and returns n.
  std::size_t header(const std::string& label) {
    std::istringstream in(line());
    std::string got;
    std::size_t n = 0;
    if (!(in >> got >> n) || got != label) fail("expected '" + label + "' record");
    return n;
  }

  std::string block(const std::string& label) {
    const std::size_t n = header(label);
    std::string text = take(n);
    if (take(1) != "\n") fail("malformed '" + label + "' block");
    return text;
  }

  std::size_t position() const { return pos_; }
  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error("checkpoint '" + path_ + "': " + what + " at byte " + std::to_string(pos_));
  }

 private:
  const std::string& bytes_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

const std::vector<float>& Checkpoint::array(const std::string& name) const {
  for (const auto& [key, values] : arrays) {
    if (key == name) return values;
  }
  throw std::runtime_error("checkpoint has no array '" + name + "'");
}

const std::string& Checkpoint::rng_state(const std::string& name) const {
  for (const auto& [key, state] : rng_states) {
    if (key == name) return state;
  }
  throw std::runtime_error("checkpoint has no rng state '" + name + "'");
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string out;
  out += std::string(kTag) + "\n";
  out += "version " + std::to_string(ckpt.version) + "\n";
  out += "digest " + (ckpt.config_digest.empty() ? std::string("-") : ckpt.config_digest) + "\n";
  out += "phase " + std::to_string(ckpt.completed_phase) + "\n";
  put_block(out, "config", ckpt.config_text);
  out += "rngs " + std::to_string(ckpt.rng_states.size()) + "\n";
  for (const auto& [name, state] : ckpt.rng_states) {
    put_block(out, "name", name);
    put_block(out, "state", state);
  }
  out += "arrays " + std::to_string(ckpt.arrays.size()) + "\n";
  for (const auto& [name, values] : ckpt.arrays) {
    put_block(out, "name", name);
    out += "floats " + std::to_string(values.size()) + "\n";
    for (float v : values) put_float(out, v);
    out += "\n";
  }
  out += "sha256 " + sha256_hex(out) + "\n";

  const std::string tmp = path + ".tmp";
  {
    std::ofstream file(tmp, std::ios::binary | std::ios::trunc);
    if (!file) throw std::runtime_error("cannot write checkpoint '" + path + "'");
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw std::runtime_error("write failed for checkpoint '" + path + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error("cannot move checkpoint into '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  Reader in(bytes, path);
  if (in.line() != kTag) in.fail("not a checkpoint file");

  Checkpoint ckpt;
  ckpt.version = static_cast<int>(in.header("version"));
  if (ckpt.version != kCheckpointVersion) {
    in.fail("version " + std::to_string(ckpt.version) + " is not supported (expected " +
            std::to_string(kCheckpointVersion) + ")");
  }
  {
    std::istringstream line(in.line());
    std::string label;
    line >> label >> ckpt.config_digest;
    if (label != "digest") in.fail("expected 'digest' record");
    if (ckpt.config_digest == "-") ckpt.config_digest.clear();
  }
  ckpt.completed_phase = static_cast<int>(in.header("phase"));
  if (ckpt.completed_phase > 3) in.fail("phase marker out of range");
  ckpt.config_text = in.block("config");
  const std::size_t rngs = in.header("rngs");
  for (std::size_t i = 0; i < rngs; ++i) {
    std::string name = in.block("name");
    ckpt.rng_states.emplace_back(std::move(name), in.block("state"));
  }
  const std::size_t arrays = in.header("arrays");
  for (std::size_t i = 0; i < arrays; ++i) {
    std::string name = in.block("name");
    const std::size_t count = in.header("floats");
    const std::string raw = in.take(4 * count);
    if (in.take(1) != "\n") in.fail("malformed array '" + name + "'");
    std::vector<float> values(count);
    const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
    for (std::size_t k = 0; k < count; ++k) values[k] = get_float(p + 4 * k);
    ckpt.arrays.emplace_back(std::move(name), std::move(values));
  }
  const std::size_t body_end = in.position();
  const std::string trailer = in.line();
  if (trailer.rfind("sha256 ", 0) != 0) in.fail("missing integrity trailer");
  if (trailer.substr(7) != sha256_hex(std::string_view(bytes).substr(0, body_end))) in.fail("integrity check failed");
  if (in.position() != bytes.size()) in.fail("trailing bytes after trailer");
  return ckpt;
}

}  // namespace dpcn::data
