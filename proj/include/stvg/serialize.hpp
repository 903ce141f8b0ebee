#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "stvg/tensor.hpp"

namespace stvg {

// Binary tensor records: magic "STVT", version u32, rank u32, one u64 extent
// per axis, then the row-major f64 payload. All fields little-endian. Shared
// by checkpoints and dataset files.

inline constexpr uint32_t kTensorFormatVersion = 1;

void write_u32(std::ostream& os, uint32_t v);
void write_u64(std::ostream& os, uint64_t v);
void write_f64(std::ostream& os, double v);
void write_string(std::ostream& os, const std::string& s);  // u32 length + bytes

uint32_t read_u32(std::istream& is);
uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);
std::string read_string(std::istream& is);

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor_file(const std::string& path, const Tensor& t);
Tensor load_tensor_file(const std::string& path);

}  // namespace stvg
