#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "osp/pipeline.hpp"

namespace osp {

// "POPC" checkpoint container: little-endian named-tensor table with a
// trailing CRC32 over everything before it.
//
//   magic "POPC" | u32 version | u32 stage bitmask | u32 tensor count
//   per tensor: u32 name length | name bytes | u8 dtype (0=f32,1=f64,2=u8)
//               | u8 ndim | u32 dims... | payload
//   u32 crc32

struct NamedTensor {
    std::string name;
    uint8_t dtype = 1;  // 0=f32, 1=f64, 2=u8
    std::vector<int> dims;
    std::vector<double> f64;   // dtype 0/1
    std::vector<uint8_t> u8;   // dtype 2
};

struct CheckpointData {
    uint32_t version = 1;
    uint32_t stage_mask = 0;  // bit s set when stage s is trained
    std::vector<NamedTensor> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::filesystem::path& path);

uint32_t crc32(const uint8_t* data, size_t len);

// Pipeline round trip: parameters, prototype banks, model switches and the
// evaluation blend weight all live inside the container.
void save_pipeline(const std::filesystem::path& path, PipelineState& state, double eval_beta,
                   bool dynamic_prototypes);

struct LoadedPipeline {
    PipelineState state;
    double eval_beta = 0.0;
    bool dynamic_prototypes = false;
};

LoadedPipeline load_pipeline(const std::filesystem::path& path);

}  // namespace osp
