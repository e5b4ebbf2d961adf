// NRRD reader/writer for the subset used by the toolkit:
// NRRD0004/NRRD0005, dimension 2 or 3, types float and uchar,
// encodings raw and gzip, little-endian payloads.

#pragma once

#include <string>

#include "ablreg/volume.hpp"

namespace ablreg {

class NrrdError : public Error {
 public:
  using Error::Error;
};

enum class NrrdEncoding { raw, gzip };

/// A 2D NRRD is loaded as a volume with dims[2] == 1.
Volume read_nrrd(const std::string& path);
void write_nrrd(const Volume& volume, const std::string& path, NrrdEncoding encoding = NrrdEncoding::raw);

/// Same format on in-memory buffers.
Volume parse_nrrd(const std::string& bytes, const std::string& source_name = "<memory>");
std::string serialize_nrrd(const Volume& volume, NrrdEncoding encoding = NrrdEncoding::raw);

/// 2D images as single-slice float volumes.
Image2D read_nrrd_image(const std::string& path);
void write_nrrd_image(const Image2D& image, const std::string& path);

}  // namespace ablreg
