#include "spba/dataset_io.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "spba/error.hpp"

namespace spba {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                 static_cast<char>((v >> 16) & 0xff),
                                 static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

void put_u16(std::ostream& os, std::uint16_t v) {
  const std::array<char, 2> b = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  os.write(b.data(), 2);
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::int16_t to_pcm16(double x) {
  const double c = std::clamp(x, -1.0, 1.0);
  return static_cast<std::int16_t>(std::lround(c * 32767.0));
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) data_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

Waveform quantize_pcm16(Waveform w) {
  for (auto& x : w.samples) x = to_pcm16(x) / 32767.0;
  return w;
}

void write_wav(const fs::path& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) runtime_error("cannot write " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  out.write("RIFF", 4);
  put_u32(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.write("data", 4);
  put_u32(out, data_bytes);
  for (double x : w.samples) put_u16(out, static_cast<std::uint16_t>(to_pcm16(x)));
  if (!out) runtime_error("failed writing " + path.string());
}

Waveform read_wav(const fs::path& path) {
  const std::string bytes = read_file(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  if (n < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0) {
    data_error(path.string() + ": not a RIFF/WAVE file");
  }
  Waveform w;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= n) {
    const std::uint32_t size = get_u32(p + pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > n) data_error(path.string() + ": truncated chunk");
    if (std::memcmp(p + pos, "fmt ", 4) == 0) {
      if (size < 16) data_error(path.string() + ": short fmt chunk");
      const auto format = get_u16(p + body);
      const auto channels = get_u16(p + body + 2);
      const auto bits = get_u16(p + body + 14);
      if (format != 1 || channels != 1 || bits != 16) {
        data_error(path.string() + ": only mono 16-bit PCM is supported");
      }
      w.sample_rate = static_cast<int>(get_u32(p + body + 4));
      have_fmt = true;
    } else if (std::memcmp(p + pos, "data", 4) == 0) {
      if (!have_fmt) data_error(path.string() + ": data chunk before fmt chunk");
      w.samples.resize(size / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(get_u16(p + body + 2 * i));
        w.samples[i] = v / 32767.0;
      }
      return w;
    }
    pos = body + size + (size & 1);
  }
  data_error(path.string() + ": no data chunk");
}

void write_vector_file(const fs::path& path, const FeatureVector& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) runtime_error("cannot write " + path.string());
  char buf[32];
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", v[i]);
    if (i) out << ' ';
    out << buf;
  }
  out << '\n';
  if (!out) runtime_error("failed writing " + path.string());
}

FeatureVector read_vector_file(const fs::path& path) {
  const std::string text = read_file(path);
  FeatureVector v;
  const char* cur = text.c_str();
  const char* end = cur + text.size();
  while (cur < end) {
    while (cur < end && std::isspace(static_cast<unsigned char>(*cur))) ++cur;
    if (cur >= end) break;
    char* next = nullptr;
    const double x = std::strtod(cur, &next);
    if (next == cur) data_error(path.string() + ": malformed number");
    v.push_back(x);
    cur = next;
  }
  if (v.empty()) data_error(path.string() + ": empty vector file");
  return v;
}

void save_dataset(const LabeledDataset& d, const fs::path& dir) {
  const fs::path payload_dir = dir / "payloads";
  std::error_code ec;
  fs::remove_all(payload_dir, ec);
  fs::create_directories(payload_dir);

  ordered_json desc;
  desc["version"] = 1;
  desc["num_classes"] = d.num_classes;
  desc["payload_kind"] = to_string(d.payload_kind);
  auto& samples = desc["samples"] = ordered_json::array();
  const char* ext = d.payload_kind == PayloadKind::vector ? ".vec" : ".wav";
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const Sample& s = d.samples[i];
    const std::string file = "payloads/" + make_uid(i) + ext;
    if (s.is_vector()) {
      write_vector_file(dir / file, s.features());
    } else {
      write_wav(dir / file, s.waveform());
    }
    ordered_json e;
    e["uid"] = s.uid;
    e["label"] = s.label;
    if (s.original_label) e["original_label"] = *s.original_label;
    if (s.trigger_id) e["trigger_id"] = *s.trigger_id;
    e["split"] = to_string(s.split_tag);
    e["file"] = file;
    samples.push_back(std::move(e));
  }
  std::ofstream out(dir / "dataset.json", std::ios::binary);
  if (!out) runtime_error("cannot write " + (dir / "dataset.json").string());
  out << desc.dump(1) << '\n';
}

LabeledDataset load_dataset(const fs::path& dir) {
  const fs::path desc_path = dir / "dataset.json";
  if (!fs::exists(desc_path)) data_error("no dataset descriptor at " + desc_path.string());
  LabeledDataset d;
  try {
    const auto desc = ordered_json::parse(read_file(desc_path));
    if (desc.at("version").get<int>() != 1) data_error(desc_path.string() + ": unsupported version");
    d.num_classes = desc.at("num_classes").get<int>();
    d.payload_kind = payload_kind_from_string(desc.at("payload_kind").get<std::string>());
    for (const auto& e : desc.at("samples")) {
      Sample s;
      s.uid = e.at("uid").get<std::string>();
      s.label = e.at("label").get<int>();
      if (e.contains("original_label")) s.original_label = e.at("original_label").get<int>();
      if (e.contains("trigger_id")) s.trigger_id = e.at("trigger_id").get<std::string>();
      s.split_tag = split_tag_from_string(e.at("split").get<std::string>());
      const fs::path file = dir / e.at("file").get<std::string>();
      if (d.payload_kind == PayloadKind::vector) {
        s.payload = read_vector_file(file);
      } else {
        s.payload = read_wav(file);
      }
      d.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    data_error(desc_path.string() + ": " + e.what());
  }
  return d;
}

}  // namespace spba
