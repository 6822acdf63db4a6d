#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ldlva/model.hpp"

namespace ldlva::model {

namespace {

using json = nlohmann::json;

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const unsigned char* bytes, std::size_t n) {
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (std::size_t i = 0; i < n; i += 3) {
    const std::uint32_t b0 = bytes[i];
    const std::uint32_t b1 = i + 1 < n ? bytes[i + 1] : 0;
    const std::uint32_t b2 = i + 2 < n ? bytes[i + 2] : 0;
    const std::uint32_t triple = (b0 << 16) | (b1 << 8) | b2;
    out += kAlphabet[(triple >> 18) & 63];
    out += kAlphabet[(triple >> 12) & 63];
    out += i + 1 < n ? kAlphabet[(triple >> 6) & 63] : '=';
    out += i + 2 < n ? kAlphabet[triple & 63] : '=';
  }
  return out;
}

std::vector<unsigned char> base64_decode(std::string_view text) {
  std::array<int, 256> lookup;
  lookup.fill(-1);
  for (int i = 0; i < 64; ++i) lookup[static_cast<unsigned char>(kAlphabet[i])] = i;
  if (text.size() % 4 != 0) throw ParseError(0, "base64 payload length is not a multiple of 4");
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::uint32_t triple = 0;
    int pad = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      const char ch = text[i + k];
      int value = 0;
      if (ch == '=' && i + 4 == text.size() && k >= 2) {
        ++pad;
      } else {
        value = lookup[static_cast<unsigned char>(ch)];
        if (value < 0 || pad > 0) throw ParseError(0, "invalid base64 payload");
      }
      triple = (triple << 6) | static_cast<std::uint32_t>(value);
    }
    out.push_back(static_cast<unsigned char>((triple >> 16) & 0xFF));
    if (pad < 2) out.push_back(static_cast<unsigned char>((triple >> 8) & 0xFF));
    if (pad < 1) out.push_back(static_cast<unsigned char>(triple & 0xFF));
  }
  return out;
}

std::string u64_hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << v;
  return s.str();
}

std::uint64_t parse_hex(const std::string& s) {
  std::size_t used = 0;
  const auto v = std::stoull(s, &used, 16);
  if (used != s.size()) throw ParseError(0, "bad hex value '" + s + "'");
  return v;
}

json hyper_json(const numerics::AdamHyper& h) {
  return json{{"lr", h.lr}, {"beta1", h.beta1}, {"beta2", h.beta2}, {"eps", h.eps}};
}

numerics::AdamHyper hyper_from(const json& j) {
  return {j.at("lr").get<double>(), j.at("beta1").get<double>(), j.at("beta2").get<double>(),
          j.at("eps").get<double>()};
}

json adam_json(const numerics::AdamState& s) {
  return json{{"hyper", hyper_json(s.hyper)},
              {"m", encode_f64_base64(s.m)},
              {"v", encode_f64_base64(s.v)},
              {"step", s.step}};
}

numerics::AdamState adam_from(const json& j, std::size_t expected) {
  numerics::AdamState s{hyper_from(j.at("hyper")), decode_f64_base64(j.at("m").get<std::string>()),
                        decode_f64_base64(j.at("v").get<std::string>()), j.at("step").get<std::uint64_t>()};
  if (s.m.size() != expected || s.v.size() != expected) {
    throw ParseError(0, "optimizer state shape does not match its parameter");
  }
  return s;
}

Vector tensor_from(const json& j, std::size_t rows, std::size_t cols, const std::string& name) {
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 2 || shape[0] != rows || shape[1] != cols) {
    throw ParseError(0, "tensor '" + name + "' shape does not match recorded dims");
  }
  Vector data = decode_f64_base64(j.at("data").get<std::string>());
  if (data.size() != rows * cols) throw ParseError(0, "tensor '" + name + "' payload size mismatch");
  return data;
}

}  // namespace

std::string encode_f64_base64(std::span<const double> values) {
  std::vector<unsigned char> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xFF);
  }
  return base64_encode(bytes.data(), bytes.size());
}

Vector decode_f64_base64(std::string_view text) {
  const auto bytes = base64_decode(text);
  if (bytes.size() % 8 != 0) throw ParseError(0, "f64 payload is not a multiple of 8 bytes");
  Vector out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

std::string serialize_checkpoint(const Checkpoint& ck) {
  const auto refs = tensors(ck.params);
  if (ck.param_adam.size() != refs.size()) {
    throw InternalStateError("checkpoint: optimizer state count does not match parameter tensors");
  }
  json params = json::object();
  json adam = json::object();
  for (std::size_t t = 0; t < refs.size(); ++t) {
    params[refs[t].name] = json{{"shape", {refs[t].rows, refs[t].cols}}, {"data", encode_f64_base64(refs[t].data)}};
    adam[refs[t].name] = adam_json(ck.param_adam[t]);
  }
  json lambda_adam{{"hyper", hyper_json(ck.lambda_adam.hyper)},
                   {"m", encode_f64_base64(ck.lambda_adam.m)},
                   {"v", encode_f64_base64(ck.lambda_adam.v)},
                   {"steps", ck.lambda_adam.steps}};
  json rng = json::array();
  for (auto w : ck.rng_state) rng.push_back(u64_hex(w));

  const json j{{"format", "ldlva-checkpoint"},
               {"version", ck.version},
               {"tool_version", ck.tool_version},
               {"config", ck.config},
               {"dims", to_json(ck.dims)},
               {"epoch", ck.epoch},
               {"params", params},
               {"adam", adam},
               {"centers", json{{"shape", {ck.centers.rows(), ck.centers.cols()}},
                                {"data", encode_f64_base64(ck.centers.data())}}},
               {"center_adam", adam_json(ck.center_adam)},
               {"lambda", encode_f64_base64(ck.lambda)},
               {"lambda_adam", lambda_adam},
               {"rng_state", rng}};
  return j.dump(1) + "\n";
}

Checkpoint parse_checkpoint(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(0, std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "ldlva-checkpoint") {
      throw ParseError(0, "not an ldlva checkpoint");
    }
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw UnsupportedVersionError("unsupported checkpoint version " + std::to_string(version) +
                                    " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
    }
    Checkpoint ck;
    ck.version = version;
    ck.tool_version = j.at("tool_version").get<std::string>();
    ck.config = j.at("config");
    ck.dims = model_dims_from_json(j.at("dims"));
    ck.epoch = j.at("epoch").get<std::size_t>();

    Rng shape_rng(0);
    ck.params = init_model(ck.dims, shape_rng);
    auto refs = tensors(ck.params);
    const auto& params = j.at("params");
    const auto& adam = j.at("adam");
    if (params.size() != refs.size() || adam.size() != refs.size()) {
      throw ParseError(0, "checkpoint tensor set does not match recorded dims");
    }
    for (auto& ref : refs) {
      const Vector data = tensor_from(params.at(ref.name), ref.rows, ref.cols, ref.name);
      std::copy(data.begin(), data.end(), ref.data.begin());
      ck.param_adam.push_back(adam_from(adam.at(ref.name), ref.data.size()));
    }

    const std::size_t m = ck.dims.num_classes;
    const std::size_t v = ck.dims.feature_dim;
    ck.centers = Matrix(m, v);
    const Vector centers = tensor_from(j.at("centers"), m, v, "centers");
    std::copy(centers.begin(), centers.end(), ck.centers.data().begin());
    ck.center_adam = adam_from(j.at("center_adam"), m * v);

    ck.lambda = decode_f64_base64(j.at("lambda").get<std::string>());
    const auto& la = j.at("lambda_adam");
    ck.lambda_adam = {hyper_from(la.at("hyper")), decode_f64_base64(la.at("m").get<std::string>()),
                      decode_f64_base64(la.at("v").get<std::string>()),
                      la.at("steps").get<std::vector<std::uint64_t>>()};
    const std::size_t n = ck.lambda.size();
    if (ck.lambda_adam.m.size() != n || ck.lambda_adam.v.size() != n || ck.lambda_adam.steps.size() != n) {
      throw ParseError(0, "lambda optimizer state does not match lambda vector");
    }
    const auto& rng = j.at("rng_state");
    if (rng.size() != 4) throw ParseError(0, "rng_state must have 4 words");
    for (std::size_t w = 0; w < 4; ++w) ck.rng_state[w] = parse_hex(rng[w].get<std::string>());
    return ck;
  } catch (const json::exception& e) {
    throw ParseError(0, std::string("checkpoint field error: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw ParseError(0, "checkpoint rng_state is not hex");
  } catch (const std::out_of_range&) {
    throw ParseError(0, "checkpoint rng_state out of range");
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const std::string text = serialize_checkpoint(ck);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace ldlva::model
