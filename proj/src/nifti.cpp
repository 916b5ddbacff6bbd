#include "neurofuse/nifti.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <fmt/format.h>
#include <zlib.h>

namespace neurofuse {

namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host assumed");

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kVoxOffset = 352;

// Field offsets inside the 348-byte NIfTI-1 header.
namespace off {
constexpr std::size_t sizeof_hdr = 0;
constexpr std::size_t dim = 40;
constexpr std::size_t datatype = 70;
constexpr std::size_t bitpix = 72;
constexpr std::size_t pixdim = 76;
constexpr std::size_t vox_offset = 108;
constexpr std::size_t scl_slope = 112;
constexpr std::size_t scl_inter = 116;
constexpr std::size_t xyzt_units = 123;
constexpr std::size_t qform_code = 252;
constexpr std::size_t sform_code = 254;
constexpr std::size_t srow_x = 280;
constexpr std::size_t magic = 344;
}  // namespace off

template <typename T>
T byteswap(T value) {
  std::array<std::uint8_t, sizeof(T)> raw;
  std::memcpy(raw.data(), &value, sizeof(T));
  std::reverse(raw.begin(), raw.end());
  std::memcpy(&value, raw.data(), sizeof(T));
  return value;
}

class HeaderView {
 public:
  HeaderView(std::span<const std::uint8_t> bytes, bool swap) : bytes_(bytes), swap_(swap) {}

  template <typename T>
  T get(std::size_t offset) const {
    T v;
    std::memcpy(&v, bytes_.data() + offset, sizeof(T));
    return swap_ ? byteswap(v) : v;
  }

  bool swapped() const { return swap_; }

 private:
  std::span<const std::uint8_t> bytes_;
  bool swap_;
};

template <typename T>
void put(Bytes& out, std::size_t offset, T value) {
  std::memcpy(out.data() + offset, &value, sizeof(T));
}

struct ParsedHeader {
  Grid grid;
  std::int16_t datatype = 0;
  std::size_t bytes_per_voxel = 0;
  std::size_t data_offset = 0;
  int frames = 1;
  double slope = 0.0;
  double inter = 0.0;
  bool swap = false;
};

std::size_t datatype_size(std::int16_t code) {
  switch (static_cast<NiftiDatatype>(code)) {
    case NiftiDatatype::UInt8: return 1;
    case NiftiDatatype::Int16: return 2;
    case NiftiDatatype::Int32: return 4;
    case NiftiDatatype::Float32: return 4;
    case NiftiDatatype::Float64: return 8;
  }
  return 0;
}

ParsedHeader parse_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize) {
    throw Error(ErrorCode::TruncatedData, fmt::format("{} bytes is shorter than a NIfTI-1 header", bytes.size()));
  }
  std::int32_t sizeof_hdr;
  std::memcpy(&sizeof_hdr, bytes.data() + off::sizeof_hdr, 4);
  bool swap = false;
  if (sizeof_hdr != 348) {
    if (byteswap(sizeof_hdr) == 348) {
      swap = true;
    } else if (sizeof_hdr == 540 || byteswap(sizeof_hdr) == 540) {
      throw Error(ErrorCode::BadMagic, "NIfTI-2 headers are not supported");
    } else {
      throw Error(ErrorCode::BadMagic, fmt::format("sizeof_hdr is {}, not 348", sizeof_hdr));
    }
  }
  const char* magic = reinterpret_cast<const char*>(bytes.data() + off::magic);
  if (std::memcmp(magic, "n+1\0", 4) != 0) {
    if (std::memcmp(magic, "ni1\0", 4) == 0) {
      throw Error(ErrorCode::BadMagic, "two-file NIfTI (.hdr/.img) is not supported");
    }
    throw Error(ErrorCode::BadMagic, "missing 'n+1' magic (ANALYZE or corrupt file)");
  }

  const HeaderView h(bytes, swap);
  ParsedHeader p;
  p.swap = swap;

  const auto ndim = h.get<std::int16_t>(off::dim);
  if (ndim < 1 || ndim > 7) {
    throw Error(ErrorCode::NonPositiveDim, fmt::format("dim[0] = {} out of range", ndim));
  }
  Dims dims{1, 1, 1};
  for (int a = 0; a < 3; ++a) {
    if (a < ndim) {
      const auto d = h.get<std::int16_t>(off::dim + 2 * (a + 1));
      if (d <= 0) throw Error(ErrorCode::NonPositiveDim, fmt::format("dim[{}] = {}", a + 1, d));
      dims[static_cast<std::size_t>(a)] = d;
    }
  }
  if (ndim >= 4) {
    const auto nt = h.get<std::int16_t>(off::dim + 8);
    if (nt <= 0) throw Error(ErrorCode::NonPositiveDim, fmt::format("dim[4] = {}", nt));
    p.frames = nt;
  }

  Eigen::Vector3d spacing;
  for (int a = 0; a < 3; ++a) {
    const double s = std::abs(static_cast<double>(h.get<float>(off::pixdim + 4 * (a + 1))));
    spacing[a] = (std::isfinite(s) && s > 0.0) ? s : 1.0;
  }

  p.datatype = h.get<std::int16_t>(off::datatype);
  p.bytes_per_voxel = datatype_size(p.datatype);
  if (p.bytes_per_voxel == 0) {
    throw Error(ErrorCode::UnsupportedDatatype, fmt::format("datatype code {}", p.datatype));
  }

  const double vox_offset = h.get<float>(off::vox_offset);
  p.data_offset = static_cast<std::size_t>(std::max(vox_offset, static_cast<double>(kHeaderSize)));

  p.slope = h.get<float>(off::scl_slope);
  p.inter = h.get<float>(off::scl_inter);
  if (!std::isfinite(p.slope)) p.slope = 0.0;
  if (!std::isfinite(p.inter)) p.inter = 0.0;

  p.grid = Grid::axis_aligned(dims, spacing);
  if (h.get<std::int16_t>(off::sform_code) > 0) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        p.grid.vox2world(r, c) = h.get<float>(off::srow_x + 16 * r + 4 * c);
      }
    }
  }
  p.grid.validate();
  return p;
}

template <typename Raw>
void convert(const std::uint8_t* src, std::size_t n, bool swap, double slope, double inter,
             Volume3D::Array& out) {
  const bool scale = slope != 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Raw v;
    std::memcpy(&v, src + i * sizeof(Raw), sizeof(Raw));
    if (swap) v = byteswap(v);
    const double d = static_cast<double>(v);
    out[static_cast<Eigen::Index>(i)] = static_cast<float>(scale ? d * slope + inter : d);
  }
}

Bytes maybe_inflate(std::span<const std::uint8_t> bytes) {
  if (is_gzip(bytes)) return gzip_decompress(bytes);
  return Bytes(bytes.begin(), bytes.end());
}

}  // namespace

bool is_gzip(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

int nifti_frame_count(std::span<const std::uint8_t> bytes) {
  const Bytes raw = maybe_inflate(bytes);
  return parse_header(raw).frames;
}

Volume3D read_nifti(std::span<const std::uint8_t> bytes, int frame) {
  if (is_gzip(bytes)) {
    const Bytes raw = gzip_decompress(bytes);
    return read_nifti(raw, frame);
  }
  const ParsedHeader p = parse_header(bytes);
  if (frame < 0 || frame >= p.frames) {
    throw Error(ErrorCode::InvalidArgument, fmt::format("frame {} of {}", frame, p.frames));
  }
  const std::size_t n = p.grid.voxel_count();
  const std::size_t frame_bytes = n * p.bytes_per_voxel;
  const std::size_t start = p.data_offset + static_cast<std::size_t>(frame) * frame_bytes;
  if (bytes.size() < start + frame_bytes) {
    throw Error(ErrorCode::TruncatedData,
                fmt::format("payload needs {} bytes, file has {}", start + frame_bytes, bytes.size()));
  }
  Volume3D::Array data(static_cast<Eigen::Index>(n));
  const std::uint8_t* src = bytes.data() + start;
  switch (static_cast<NiftiDatatype>(p.datatype)) {
    case NiftiDatatype::UInt8: convert<std::uint8_t>(src, n, p.swap, p.slope, p.inter, data); break;
    case NiftiDatatype::Int16: convert<std::int16_t>(src, n, p.swap, p.slope, p.inter, data); break;
    case NiftiDatatype::Int32: convert<std::int32_t>(src, n, p.swap, p.slope, p.inter, data); break;
    case NiftiDatatype::Float32: convert<float>(src, n, p.swap, p.slope, p.inter, data); break;
    case NiftiDatatype::Float64: convert<double>(src, n, p.swap, p.slope, p.inter, data); break;
  }
  return Volume3D(p.grid, std::move(data));
}

Bytes write_nifti(const Volume3D& vol) {
  const std::size_t n = static_cast<std::size_t>(vol.size());
  Bytes out(kVoxOffset + n * sizeof(float), 0);
  const Grid& g = vol.grid();

  put<std::int32_t>(out, off::sizeof_hdr, 348);
  put<std::int16_t>(out, off::dim, 3);
  for (int a = 0; a < 3; ++a) {
    put<std::int16_t>(out, off::dim + 2 * (a + 1), static_cast<std::int16_t>(g.dims[static_cast<std::size_t>(a)]));
  }
  for (int a = 4; a < 8; ++a) put<std::int16_t>(out, off::dim + 2 * a, 1);
  put<std::int16_t>(out, off::datatype, static_cast<std::int16_t>(NiftiDatatype::Float32));
  put<std::int16_t>(out, off::bitpix, 32);
  put<float>(out, off::pixdim, 1.0f);
  for (int a = 0; a < 3; ++a) put<float>(out, off::pixdim + 4 * (a + 1), static_cast<float>(g.spacing[a]));
  put<float>(out, off::vox_offset, static_cast<float>(kVoxOffset));
  put<float>(out, off::scl_slope, 1.0f);
  put<float>(out, off::scl_inter, 0.0f);
  out[off::xyzt_units] = 2;  // mm
  put<std::int16_t>(out, off::qform_code, 0);
  put<std::int16_t>(out, off::sform_code, 1);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      put<float>(out, off::srow_x + 16 * r + 4 * c, static_cast<float>(g.vox2world(r, c)));
    }
  }
  std::memcpy(out.data() + off::magic, "n+1\0", 4);
  std::memcpy(out.data() + kVoxOffset, vol.data().data(), n * sizeof(float));
  return out;
}

Bytes gzip_compress(std::span<const std::uint8_t> raw) {
  z_stream zs{};
  if (deflateInit2(&zs, 6, Z_DEFLATED, MAX_WBITS + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
    throw Error(ErrorCode::IoError, "deflateInit2 failed");
  }
  Bytes out(deflateBound(&zs, static_cast<uLong>(raw.size())) + 32);
  zs.next_in = const_cast<Bytef*>(raw.data());
  zs.avail_in = static_cast<uInt>(raw.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw Error(ErrorCode::IoError, "gzip compression failed");
  out.resize(zs.total_out);
  return out;
}

Bytes gzip_decompress(std::span<const std::uint8_t> gz) {
  z_stream zs{};
  if (inflateInit2(&zs, MAX_WBITS + 32) != Z_OK) throw Error(ErrorCode::IoError, "inflateInit2 failed");
  zs.next_in = const_cast<Bytef*>(gz.data());
  zs.avail_in = static_cast<uInt>(gz.size());
  Bytes out;
  std::array<std::uint8_t, 1 << 16> chunk;
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw Error(ErrorCode::TruncatedData, "gzip stream is corrupt or truncated");
    }
    out.insert(out.end(), chunk.begin(), chunk.begin() + (chunk.size() - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw Error(ErrorCode::TruncatedData, "gzip stream ended early");
    }
  }
  inflateEnd(&zs);
  return out;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

void write_file(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text_file(const std::filesystem::path& path) {
  const Bytes b = read_file(path);
  return std::string(b.begin(), b.end());
}

Volume3D load_nifti(const std::filesystem::path& path, int frame) {
  return read_nifti(read_file(path), frame);
}

void save_nifti(const Volume3D& vol, const std::filesystem::path& path) {
  const Bytes raw = write_nifti(vol);
  if (path.extension() == ".gz") {
    write_file(path, gzip_compress(raw));
  } else {
    write_file(path, raw);
  }
}

}  // namespace neurofuse
