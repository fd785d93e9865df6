#include "dne/member_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <string>

#include "dne/error.hpp"

namespace dne {

namespace {

constexpr std::uint8_t kMemberMagic[4] = {'D', 'N', 'E', 'W'};
constexpr std::size_t kHeaderBytes = 4 + 4 * 4 + 8;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
std::uint64_t get_le(std::span<const std::uint8_t> b, std::size_t at, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[at + i]) << (8 * i);
  return v;
}

std::uint32_t checked_u32(long long v, const char* what) {
  if (v < 0 || v > 0xFFFFFFFFLL) throw PreconditionError(std::string(what) + " does not fit in u32");
  return static_cast<std::uint32_t>(v);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::uint8_t> encode_member(const EnsembleMember& member, std::uint32_t spec_id) {
  std::vector<std::uint8_t> out(std::begin(kMemberMagic), std::end(kMemberMagic));
  out.reserve(kHeaderBytes + 4 * member.weights.size());
  put_u32(out, spec_id);
  put_u32(out, checked_u32(member.generation, "generation"));
  put_u32(out, checked_u32(member.train_reward, "train reward"));
  put_u32(out, checked_u32(member.validation_reward, "validation reward"));
  put_u64(out, member.weights.size());
  for (float v : member.weights.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

DecodedMember decode_member(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(std::begin(kMemberMagic), std::end(kMemberMagic), bytes.begin())) {
    throw FormatError("bad magic: not a DNEW member file");
  }
  if (bytes.size() < kHeaderBytes) throw FormatError("unexpected end of file in DNEW header");
  DecodedMember d;
  d.spec_id = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
  d.member.generation = static_cast<std::int64_t>(get_le(bytes, 8, 4));
  d.member.train_reward = static_cast<int>(get_le(bytes, 12, 4));
  d.member.validation_reward = static_cast<int>(get_le(bytes, 16, 4));
  const std::uint64_t count = get_le(bytes, 20, 8);
  const std::size_t payload = bytes.size() - kHeaderBytes;
  if (count > payload / 4) {
    throw FormatError("unexpected end of file: header declares " + std::to_string(count) +
                      " parameters, file holds " + std::to_string(payload / 4));
  }
  if (payload != count * 4) {
    throw FormatError("length mismatch: header declares " + std::to_string(count) + " parameters, file holds " +
                      std::to_string(payload) + " payload bytes");
  }
  d.member.weights = WeightVector(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < count; ++i) {
    d.member.weights.values[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(bytes, kHeaderBytes + 4 * i, 4)));
  }
  return d;
}

void save_member(const std::filesystem::path& path, const EnsembleMember& member, std::uint32_t spec_id) {
  const std::vector<std::uint8_t> bytes = encode_member(member, spec_id);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

DecodedMember load_member(const std::filesystem::path& path) {
  try {
    return decode_member(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.filename().string() + ": " + e.what());
  }
}

std::vector<EnsembleMember> load_members(const std::filesystem::path& dir, const NetworkSpec& spec) {
  if (!std::filesystem::is_directory(dir)) throw Error("'" + dir.string() + "' is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".dnew") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  const std::size_t expected = parameter_count(spec);
  const std::uint32_t id = spec_id(spec);
  std::vector<EnsembleMember> members;
  members.reserve(files.size());
  for (const auto& f : files) {
    DecodedMember d = load_member(f);
    if (id != 0 && d.spec_id != id) {
      throw FormatError(f.filename().string() + ": spec id " + std::to_string(d.spec_id) + " does not match " +
                        std::to_string(id));
    }
    if (d.member.weights.size() != expected) {
      throw FormatError(f.filename().string() + ": length mismatch: " + std::to_string(d.member.weights.size()) +
                        " parameters, spec expects " + std::to_string(expected));
    }
    members.push_back(std::move(d.member));
  }
  return members;
}

DirectoryEnsemble::DirectoryEnsemble(std::filesystem::path dir, std::uint32_t spec_id)
    : dir_(std::move(dir)), spec_id_(spec_id) {
  std::filesystem::create_directories(dir_);
}

void DirectoryEnsemble::store(EnsembleMember member) {
  char name[32];
  std::snprintf(name, sizeof name, "member_%06zu.dnew", saved_count());
  save_member(dir_ / name, member, spec_id_);
}

}  // namespace dne
