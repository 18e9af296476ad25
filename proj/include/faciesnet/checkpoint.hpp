#pragma once

// `.fnet` checkpoint: a text manifest (format version, seed, model spec,
// standardizer, parameter names and shapes) terminated by a `blob <bytes>`
// line, then every parameter as little-endian IEEE-754 binary32 in manifest
// order.
//
//   FNET 1
//   seed 7
//   in_channels 7
//   window 31
//   stem 5 16                    | stem none
//   pool 2 2
//   stage 8 8 3 16 8 7 16 8      (one line per inception stage)
//   fc_hidden 64
//   dropout 0.5
//   classes 9
//   standardizer GR <mean> <std> (seven lines)
//   train_counts 68 940 780 271 296 582 141 686 185
//   param stem.w 16 7 5          (one line per tensor)
//   blob 123456
//   <raw bytes>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "faciesnet/errors.hpp"
#include "faciesnet/network.hpp"
#include "faciesnet/welldata.hpp"

namespace faciesnet {

inline constexpr int kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "FNET";

struct Checkpoint {
  ModelSpec spec;
  ModelParams<float> params;
  Standardizer standardizer;
  std::uint64_t seed = 0;
  FaciesCounts train_counts{};
};

namespace detail {

inline void write_f32_le(std::ostream& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
  out.write(bytes, 4);
}

inline float read_f32_le(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

inline std::size_t read_size(std::istringstream& ls, const std::string& line) {
  long long v = -1;
  if (!(ls >> v) || v < 0) throw FormatError("checkpoint: bad integer in '" + line + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace detail

template <class T>
void save_checkpoint(std::ostream& out, const ModelSpec& spec, const ModelParams<T>& params,
                     const Standardizer& standardizer, std::uint64_t seed, const FaciesCounts& train_counts = {}) {
  params.check_against(spec);
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "seed " << seed << '\n';
  out << "in_channels " << spec.in_channels << '\n';
  out << "window " << spec.window << '\n';
  if (spec.stem) {
    out << "stem " << spec.stem->kernel << ' ' << spec.stem->channels << '\n';
  } else {
    out << "stem none\n";
  }
  out << "pool " << spec.pool_kernel << ' ' << spec.pool_stride << '\n';
  for (const auto& s : spec.stages) {
    out << "stage " << s.branch_1x1 << ' ' << s.reduce_small << ' ' << s.small_kernel << ' ' << s.small_channels
        << ' ' << s.reduce_large << ' ' << s.large_kernel << ' ' << s.large_channels << ' ' << s.pool_proj << '\n';
  }
  out << "fc_hidden";
  for (auto h : spec.fc_hidden) out << ' ' << h;
  out << '\n';
  out << "dropout " << format_number(spec.dropout) << '\n';
  out << "classes " << spec.classes << '\n';
  for (std::size_t c = 0; c < kNumChannels; ++c) {
    out << "standardizer " << kChannelNames[c] << ' ' << format_number(standardizer.mean[c]) << ' '
        << format_number(standardizer.stddev[c]) << '\n';
  }
  out << "train_counts";
  for (auto c : train_counts) out << ' ' << c;
  out << '\n';
  std::size_t scalars = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    out << "param " << params.names[i];
    for (auto d : params[i].shape()) out << ' ' << d;
    out << '\n';
    scalars += params[i].size();
  }
  out << "blob " << scalars * 4 << '\n';
  for (const auto& t : params.tensors) {
    for (auto v : t.data()) detail::write_f32_le(out, static_cast<float>(v));
  }
}

template <class T>
void save_checkpoint(const std::string& path, const ModelSpec& spec, const ModelParams<T>& params,
                     const Standardizer& standardizer, std::uint64_t seed, const FaciesCounts& train_counts = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  save_checkpoint(out, spec, params, standardizer, seed, train_counts);
  out.flush();
  if (!out) throw IoError("write failed: " + path);
}

inline Checkpoint load_checkpoint(std::istream& in) {
  Checkpoint ck;
  ck.spec.stages.clear();
  ck.spec.fc_hidden.clear();
  std::string line;
  if (!std::getline(in, line) || line.compare(0, kCheckpointMagic.size(), kCheckpointMagic) != 0) {
    throw FormatError("not a faciesnet checkpoint (bad magic)");
  }
  {
    std::istringstream ls(line.substr(kCheckpointMagic.size()));
    int version = -1;
    if (!(ls >> version)) throw FormatError("checkpoint: missing format version");
    if (version != kCheckpointVersion) {
      throw FormatError("checkpoint format version " + std::to_string(version) + " unsupported (expected " +
                        std::to_string(kCheckpointVersion) + ")");
    }
  }
  std::vector<std::pair<std::string, Shape>> manifest;
  std::array<bool, kNumChannels> seen_channel{};
  std::size_t blob_bytes = 0;
  bool have_blob = false;
  while (!have_blob && std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "seed") {
      unsigned long long s = 0;
      if (!(ls >> s)) throw FormatError("checkpoint: bad seed");
      ck.seed = s;
    } else if (key == "in_channels") {
      ck.spec.in_channels = detail::read_size(ls, line);
    } else if (key == "window") {
      ck.spec.window = detail::read_size(ls, line);
    } else if (key == "stem") {
      std::string first;
      ls >> first;
      if (first == "none") {
        ck.spec.stem.reset();
      } else {
        std::istringstream rs(first);
        StemSpec stem;
        stem.kernel = detail::read_size(rs, line);
        stem.channels = detail::read_size(ls, line);
        ck.spec.stem = stem;
      }
    } else if (key == "pool") {
      ck.spec.pool_kernel = detail::read_size(ls, line);
      ck.spec.pool_stride = detail::read_size(ls, line);
    } else if (key == "stage") {
      InceptionSpec s;
      for (auto* f : {&s.branch_1x1, &s.reduce_small, &s.small_kernel, &s.small_channels, &s.reduce_large,
                      &s.large_kernel, &s.large_channels, &s.pool_proj}) {
        *f = detail::read_size(ls, line);
      }
      ck.spec.stages.push_back(s);
    } else if (key == "fc_hidden") {
      long long h;
      while (ls >> h) {
        if (h < 1) throw FormatError("checkpoint: bad fc size");
        ck.spec.fc_hidden.push_back(static_cast<std::size_t>(h));
      }
    } else if (key == "dropout") {
      std::string v;
      ls >> v;
      const auto d = parse_number(v);
      if (!d) throw FormatError("checkpoint: bad dropout");
      ck.spec.dropout = *d;
    } else if (key == "classes") {
      ck.spec.classes = detail::read_size(ls, line);
    } else if (key == "standardizer") {
      std::string name, mean, sd;
      if (!(ls >> name >> mean >> sd)) throw FormatError("checkpoint: malformed standardizer line");
      const auto idx = channel_index(name);
      const auto m = parse_number(mean), d = parse_number(sd);
      if (!idx || !m || !d) throw FormatError("checkpoint: bad standardizer entry '" + line + "'");
      ck.standardizer.mean[*idx] = *m;
      ck.standardizer.stddev[*idx] = *d;
      seen_channel[*idx] = true;
    } else if (key == "train_counts") {
      for (auto& c : ck.train_counts) c = detail::read_size(ls, line);
    } else if (key == "param") {
      std::string name;
      ls >> name;
      Shape shape;
      long long d;
      while (ls >> d) {
        if (d < 1) throw FormatError("checkpoint: bad extent for " + name);
        shape.push_back(static_cast<std::size_t>(d));
      }
      if (name.empty() || shape.empty()) throw FormatError("checkpoint: malformed param line");
      manifest.emplace_back(name, shape);
    } else if (key == "blob") {
      blob_bytes = detail::read_size(ls, line);
      have_blob = true;
    } else {
      throw FormatError("checkpoint: unknown manifest key '" + key + "'");
    }
  }
  if (!have_blob) throw FormatError("checkpoint truncated: no parameter blob");
  for (std::size_t c = 0; c < kNumChannels; ++c) {
    if (!seen_channel[c]) throw FormatError("checkpoint: standardizer lacks " + std::string(kChannelNames[c]));
  }
  try {
    ck.spec.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: invalid model spec: ") + e.what());
  }

  std::size_t scalars = 0;
  for (const auto& [name, shape] : manifest) scalars += element_count(shape);
  if (scalars * 4 != blob_bytes) {
    throw FormatError("checkpoint: manifest shapes need " + std::to_string(scalars * 4) + " bytes, blob declares " +
                      std::to_string(blob_bytes));
  }
  std::vector<unsigned char> blob(blob_bytes);
  in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(blob_bytes));
  if (static_cast<std::size_t>(in.gcount()) != blob_bytes) {
    throw FormatError("checkpoint truncated: blob has " + std::to_string(in.gcount()) + " of " +
                      std::to_string(blob_bytes) + " bytes");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes after blob");

  std::size_t offset = 0;
  for (const auto& [name, shape] : manifest) {
    std::vector<float> data(element_count(shape));
    for (auto& v : data) {
      v = detail::read_f32_le(blob.data() + offset);
      offset += 4;
    }
    ck.params.names.push_back(name);
    ck.params.tensors.emplace_back(shape, std::move(data));
  }
  try {
    ck.params.check_against(ck.spec);
  } catch (const DimensionError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  return load_checkpoint(in);
}

}  // namespace faciesnet
