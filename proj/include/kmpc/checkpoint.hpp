#pragma once

#include <map>
#include <string>

#include "json.hpp"
#include "kmpc/adam.hpp"
#include "kmpc/tensor.hpp"

namespace kmpc {

// Named-tensor container file (.ntc):
//   bytes 0..7   little-endian uint64: byte length L of the JSON index
//   bytes 8..8+L JSON index {"format":"ntc-v1","tensors":[{name,shape,offset}...],"metadata":{...}}
//   remainder    contiguous little-endian float64 blob; "offset" counts
//                elements from the start of the blob
void save_tensors(const std::string& path, const std::map<std::string, Tensor>& tensors,
                  const nlohmann::json& metadata);
void save_tensors(const std::string& path, const std::map<std::string, Tensor>& tensors);

struct TensorContainer {
  std::map<std::string, Tensor> tensors;
  nlohmann::json metadata;
};

TensorContainer load_tensors(const std::string& path);

}  // namespace kmpc
