#pragma once
// Model checkpoint serialization.
//
// Layout: magic "ESTR", format version (u16 LE), header length (u32 LE),
// UTF-8 key=value header lines describing the configuration, each parameter
// tensor as raw little-endian f32 in declaration order, and finally an
// FNV-1a-64 checksum (u64 LE) of every preceding byte.
//
// Loading validates structure first (magic/version, then lengths derived
// from the header), then the checksum, then fills the tensors, so the error
// type names what actually went wrong: VersionError for unknown formats,
// TruncationError for missing bytes, ChecksumError for in-place corruption.

#include <string>

#include "estr/denoiser.hpp"

namespace estr {

void save_checkpoint(const Denoiser& model, const std::string& path);
Denoiser load_checkpoint(const std::string& path);

}  // namespace estr
