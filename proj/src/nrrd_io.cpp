#include "ablreg/nrrd_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <zlib.h>

namespace ablreg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<double> parse_vector(const std::string& s, const std::string& field) {
  // "(x,y,z)"
  const auto open = s.find('(');
  const auto close = s.find(')');
  if (open == std::string::npos || close == std::string::npos || close < open) {
    throw NrrdError("NRRD field '" + field + "': malformed vector '" + s + "'");
  }
  std::vector<double> out;
  std::stringstream ss(s.substr(open + 1, close - open - 1));
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

std::vector<std::string> split_vectors(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const auto b = s.find_first_not_of(" \t", pos);
    if (b == std::string::npos) break;
    if (s[b] == '(') {
      const auto e = s.find(')', b);
      if (e == std::string::npos) throw NrrdError("NRRD field 'space directions': unterminated vector");
      out.push_back(s.substr(b, e - b + 1));
      pos = e + 1;
    } else {
      const auto e = s.find_first_of(" \t", b);
      out.push_back(s.substr(b, e == std::string::npos ? std::string::npos : e - b));
      pos = e == std::string::npos ? s.size() : e;
    }
  }
  return out;
}

std::string gunzip(const std::string& in) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK) throw NrrdError("NRRD field 'encoding': zlib init failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  std::string out;
  char buf[1 << 16];
  int ret = Z_OK;
  while (ret != Z_STREAM_END) {
    zs.next_out = reinterpret_cast<Bytef*>(buf);
    zs.avail_out = sizeof(buf);
    ret = inflate(&zs, Z_NO_FLUSH);
    if (ret != Z_OK && ret != Z_STREAM_END) {
      inflateEnd(&zs);
      throw NrrdError("NRRD field 'encoding': corrupt gzip payload");
    }
    out.append(buf, sizeof(buf) - zs.avail_out);
    if (ret != Z_STREAM_END && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw NrrdError("NRRD field 'encoding': truncated gzip payload");
    }
  }
  inflateEnd(&zs);
  return out;
}

std::string gzip(const std::string& in) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
    throw NrrdError("gzip init failed");
  }
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  std::string out;
  char buf[1 << 16];
  int ret = Z_OK;
  while (ret != Z_STREAM_END) {
    zs.next_out = reinterpret_cast<Bytef*>(buf);
    zs.avail_out = sizeof(buf);
    ret = deflate(&zs, Z_FINISH);
    if (ret == Z_STREAM_ERROR) {
      deflateEnd(&zs);
      throw NrrdError("gzip compression failed");
    }
    out.append(buf, sizeof(buf) - zs.avail_out);
  }
  deflateEnd(&zs);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw NrrdError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

Volume parse_nrrd(const std::string& bytes, const std::string& source_name) {
  const auto fail = [&](const std::string& msg) { return NrrdError(source_name + ": " + msg); };
  std::size_t pos = 0;
  const auto next_line = [&](std::string& line) {
    if (pos >= bytes.size()) return false;
    auto e = bytes.find('\n', pos);
    if (e == std::string::npos) e = bytes.size();
    line = bytes.substr(pos, e - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pos = e + 1;
    return true;
  };

  std::string line;
  if (!next_line(line) || line.rfind("NRRD000", 0) != 0) throw fail("missing NRRD magic");
  const std::string magic = line;
  if (magic != "NRRD0004" && magic != "NRRD0005") throw fail("unsupported NRRD version '" + magic + "'");

  std::map<std::string, std::string> fields;
  std::map<std::string, std::string> keyvals;
  bool header_done = false;
  while (next_line(line)) {
    if (line.empty()) {
      header_done = true;
      break;
    }
    if (line[0] == '#') continue;
    const auto kv = line.find(":=");
    if (kv != std::string::npos) {
      keyvals[trim(line.substr(0, kv))] = trim(line.substr(kv + 2));
      continue;
    }
    const auto colon = line.find(": ");
    if (colon == std::string::npos) throw fail("malformed header line '" + line + "'");
    fields[lower(trim(line.substr(0, colon)))] = trim(line.substr(colon + 2));
  }
  if (!header_done) throw fail("header not terminated by a blank line");

  static const char* const known[] = {"type",   "dimension", "space",          "sizes",  "space directions",
                                      "space origin", "encoding", "endian", "kinds", "spacings",
                                      "content", "space units", "units", "labels", "centers", "centerings",
                                      "space dimension"};
  for (const auto& [k, v] : fields) {
    if (std::find_if(std::begin(known), std::end(known), [&](const char* s) { return k == s; }) == std::end(known)) {
      throw fail("unsupported NRRD field '" + k + "'");
    }
  }
  const auto need = [&](const char* k) -> const std::string& {
    auto it = fields.find(k);
    if (it == fields.end()) throw fail(std::string("missing required field '") + k + "'");
    return it->second;
  };

  Volume vol;
  const std::string type = lower(need("type"));
  std::size_t elem = 0;
  if (type == "float") {
    vol.kind = ElementKind::float32;
    elem = 4;
  } else if (type == "uchar" || type == "unsigned char" || type == "uint8" || type == "uint8_t") {
    vol.kind = ElementKind::uint8;
    elem = 1;
  } else {
    throw fail("unsupported NRRD field 'type' value '" + type + "'");
  }

  const int dim = std::stoi(need("dimension"));
  if (dim != 2 && dim != 3) throw fail("unsupported NRRD field 'dimension' value " + std::to_string(dim));

  {
    std::stringstream ss(need("sizes"));
    for (int a = 0; a < dim; ++a) {
      if (!(ss >> vol.geometry.dims[a]) || vol.geometry.dims[a] < 1) throw fail("bad field 'sizes'");
    }
    if (dim == 2) vol.geometry.dims[2] = 1;
  }

  const std::string enc = lower(need("encoding"));
  if (enc != "raw" && enc != "gzip" && enc != "gz") throw fail("unsupported NRRD field 'encoding' value '" + enc + "'");

  bool big_endian = false;
  if (auto it = fields.find("endian"); it != fields.end()) {
    const auto e = lower(it->second);
    if (e == "big") big_endian = true;
    else if (e != "little") throw fail("unsupported NRRD field 'endian' value '" + e + "'");
  }

  double flip_xy = 1.0;
  if (auto it = fields.find("space"); it != fields.end()) {
    const auto s = lower(it->second);
    if (s == "right-anterior-superior" || s == "ras") {
      flip_xy = -1.0;
    } else if (s != "left-posterior-superior" && s != "lps" && s != "3d-right-handed") {
      throw fail("unsupported NRRD field 'space' value '" + s + "'");
    }
  }

  if (auto it = fields.find("space directions"); it != fields.end()) {
    const auto vecs = split_vectors(it->second);
    std::vector<std::vector<double>> dirs;
    for (const auto& v : vecs) {
      if (v == "none") continue;
      dirs.push_back(parse_vector(v, "space directions"));
    }
    if (static_cast<int>(dirs.size()) != dim) throw fail("field 'space directions' does not match dimension");
    for (int a = 0; a < dim; ++a) {
      Vec3 d = Vec3::Zero();
      for (std::size_t c = 0; c < dirs[a].size() && c < 3; ++c) d[c] = dirs[a][c];
      if (dirs[a].size() != 3 && !(dim == 2 && dirs[a].size() == 2)) {
        throw fail("field 'space directions' vectors must have 3 components");
      }
      d.x() *= flip_xy;
      d.y() *= flip_xy;
      const double s = d.norm();
      if (!(s > 0)) throw fail("field 'space directions' has a zero vector");
      vol.geometry.spacing[a] = s;
      vol.geometry.direction.col(a) = d / s;
    }
    if (dim == 2) vol.geometry.direction.col(2) = vol.geometry.direction.col(0).cross(vol.geometry.direction.col(1));
  } else if (auto sp = fields.find("spacings"); sp != fields.end()) {
    std::stringstream ss(sp->second);
    for (int a = 0; a < dim; ++a) {
      if (!(ss >> vol.geometry.spacing[a])) throw fail("bad field 'spacings'");
    }
  }
  if (auto it = fields.find("space origin"); it != fields.end()) {
    const auto o = parse_vector(it->second, "space origin");
    if (o.size() != 3 && !(dim == 2 && o.size() == 2)) throw fail("field 'space origin' must have 3 components");
    for (std::size_t c = 0; c < o.size(); ++c) vol.geometry.origin[c] = o[c];
    vol.geometry.origin.x() *= flip_xy;
    vol.geometry.origin.y() *= flip_xy;
  }

  if (auto it = keyvals.find("ablreg_modality"); it != keyvals.end()) {
    vol.modality = modality_from_string(it->second);
  } else {
    vol.modality = vol.kind == ElementKind::uint8 ? Modality::MASK : Modality::CT;
  }

  std::string payload = bytes.substr(std::min(pos, bytes.size()));
  if (enc != "raw") payload = gunzip(payload);
  const std::size_t n = vol.geometry.voxel_count();
  if (payload.size() < n * elem) throw fail("payload shorter than sizes imply");

  vol.scalars.resize(n);
  if (elem == 1) {
    for (std::size_t i = 0; i < n; ++i) vol.scalars[i] = static_cast<unsigned char>(payload[i]);
    if (vol.modality == Modality::MASK &&
        std::any_of(vol.scalars.begin(), vol.scalars.end(), [](float v) { return v != 0.0f && v != 1.0f; })) {
      if (keyvals.count("ablreg_modality")) throw fail("MASK volume contains values other than 0 and 1");
      vol.modality = Modality::CT;
    }
  } else {
    const bool swap = big_endian != (std::endian::native == std::endian::big);
    for (std::size_t i = 0; i < n; ++i) {
      char b[4];
      std::memcpy(b, payload.data() + 4 * i, 4);
      if (swap) {
        std::swap(b[0], b[3]);
        std::swap(b[1], b[2]);
      }
      std::memcpy(&vol.scalars[i], b, 4);
    }
  }
  vol.validate();
  return vol;
}

std::string serialize_nrrd(const Volume& volume, NrrdEncoding encoding) {
  volume.validate();
  const auto& g = volume.geometry;
  std::ostringstream h;
  h << "NRRD0004\n";
  h << "# written by ablreg\n";
  h << "type: " << (volume.kind == ElementKind::uint8 ? "uchar" : "float") << "\n";
  h << "dimension: 3\n";
  h << "space: left-posterior-superior\n";
  h << "sizes: " << g.dims[0] << " " << g.dims[1] << " " << g.dims[2] << "\n";
  h << "space directions:";
  for (int a = 0; a < 3; ++a) {
    const Vec3 d = g.direction.col(a) * g.spacing[a];
    h << " (" << fmt(d.x()) << "," << fmt(d.y()) << "," << fmt(d.z()) << ")";
  }
  h << "\n";
  h << "kinds: domain domain domain\n";
  h << "endian: " << (std::endian::native == std::endian::big ? "big" : "little") << "\n";
  h << "encoding: " << (encoding == NrrdEncoding::gzip ? "gzip" : "raw") << "\n";
  h << "space origin: (" << fmt(g.origin.x()) << "," << fmt(g.origin.y()) << "," << fmt(g.origin.z()) << ")\n";
  h << "ablreg_modality:=" << to_string(volume.modality) << "\n";
  h << "\n";

  std::string payload;
  const std::size_t n = volume.scalars.size();
  if (volume.kind == ElementKind::uint8) {
    payload.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const float v = std::clamp(std::round(volume.scalars[i]), 0.0f, 255.0f);
      payload[i] = static_cast<char>(static_cast<unsigned char>(v));
    }
  } else {
    payload.resize(4 * n);
    std::memcpy(payload.data(), volume.scalars.data(), 4 * n);
  }
  if (encoding == NrrdEncoding::gzip) payload = gzip(payload);
  return h.str() + payload;
}

Volume read_nrrd(const std::string& path) { return parse_nrrd(read_file(path), path); }

void write_nrrd(const Volume& volume, const std::string& path, NrrdEncoding encoding) {
  const std::string bytes = serialize_nrrd(volume, encoding);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw NrrdError("cannot write '" + path + "'");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw NrrdError("write failed for '" + path + "'");
}

Image2D read_nrrd_image(const std::string& path) {
  const Volume v = read_nrrd(path);
  if (v.geometry.dims[2] != 1) throw NrrdError(path + ": expected a 2D image");
  Image2D img;
  img.width = v.geometry.dims[0];
  img.height = v.geometry.dims[1];
  img.spacing_x = v.geometry.spacing.x();
  img.spacing_y = v.geometry.spacing.y();
  img.pixels.assign(v.scalars.begin(), v.scalars.end());
  return img;
}

void write_nrrd_image(const Image2D& image, const std::string& path) {
  VolumeGeometry g;
  g.dims = {image.width, image.height, 1};
  g.spacing = Vec3(image.spacing_x, image.spacing_y, 1.0);
  Volume v = Volume::zeros(g, Modality::US3D);
  for (std::size_t i = 0; i < v.scalars.size(); ++i) v.scalars[i] = static_cast<float>(image.pixels[i]);
  write_nrrd(v, path);
}

}  // namespace ablreg
