#include "icmoe/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "icmoe/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "ICMT I/O assumes a little-endian host");

namespace icmoe {

namespace {
constexpr char kMagic[4] = {'I', 'C', 'M', 'T'};
}

void write_icmt(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("write_icmt: cannot open " + path.string());
    os.write(kMagic, 4);
    const std::uint32_t rank = static_cast<std::uint32_t>(t.shape().size());
    os.write(reinterpret_cast<const char*>(&rank), 4);
    for (std::size_t d : t.shape()) {
        const std::uint32_t e = static_cast<std::uint32_t>(d);
        os.write(reinterpret_cast<const char*>(&e), 4);
    }
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!os) throw IoError("write_icmt: short write to " + path.string());
}

Tensor read_icmt(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("read_icmt: cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("read_icmt: bad magic in " + path.string());
    std::uint32_t rank = 0;
    is.read(reinterpret_cast<char*>(&rank), 4);
    if (!is || rank > 8) throw IoError("read_icmt: bad rank in " + path.string());
    Shape shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) {
        std::uint32_t e = 0;
        is.read(reinterpret_cast<char*>(&e), 4);
        if (!is || e == 0) throw IoError("read_icmt: bad extent in " + path.string());
        shape[d] = e;
    }
    std::vector<double> data(shape_numel(shape));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw IoError("read_icmt: truncated data in " + path.string());
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace icmoe
