#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dne/ensemble.hpp"

namespace dne {

// DNEW layout (little-endian): "DNEW", u32 spec id, u32 generation,
// u32 train reward, u32 validation reward, u64 parameter count, f32 values.

std::vector<std::uint8_t> encode_member(const EnsembleMember& member, std::uint32_t spec_id);

struct DecodedMember {
  std::uint32_t spec_id = 0;
  EnsembleMember member;
};

/// Throws FormatError: "bad magic", "unexpected end of file", or "length mismatch".
DecodedMember decode_member(std::span<const std::uint8_t> bytes);

void save_member(const std::filesystem::path& path, const EnsembleMember& member, std::uint32_t spec_id);
DecodedMember load_member(const std::filesystem::path& path);

/// Loads every `*.dnew` in `dir` in file-name order and checks each against `spec`.
std::vector<EnsembleMember> load_members(const std::filesystem::path& dir, const NetworkSpec& spec);

/// Writes accepted members as member_NNNNNN.dnew into a directory.
class DirectoryEnsemble final : public EnsembleSink {
 public:
  DirectoryEnsemble(std::filesystem::path dir, std::uint32_t spec_id);

  const std::filesystem::path& directory() const noexcept { return dir_; }

 protected:
  void store(EnsembleMember member) override;

 private:
  std::filesystem::path dir_;
  std::uint32_t spec_id_;
};

}  // namespace dne
