#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "veil/fetch.hpp"

#include <cstring>
#include <fstream>

#include <httplib.h>
#include <zlib.h>

#include "veil/errors.hpp"

namespace veil {

namespace fs = std::filesystem;

namespace {

struct DatasetFiles {
    std::string archive;            ///< path under base_url
    std::vector<std::string> files; ///< paths under data_root after extraction
};

DatasetFiles dataset_files(const std::string& dataset_id) {
    if (dataset_id == "toy-shapes") return {"", {}};
    if (dataset_id == "cifar10") {
        DatasetFiles d;
        d.archive = "cifar-10-binary.tar.gz";
        for (int b = 1; b <= 5; ++b)
            d.files.push_back("cifar-10-batches-bin/data_batch_" + std::to_string(b) + ".bin");
        d.files.push_back("cifar-10-batches-bin/test_batch.bin");
        return d;
    }
    if (dataset_id == "cifar100")
        return {"cifar-100-binary.tar.gz",
                {"cifar-100-binary/train.bin", "cifar-100-binary/test.bin"}};
    throw DataError("unknown dataset '" + dataset_id + "' (expected toy-shapes, cifar10 or "
                    "cifar100)");
}

/// Splits "scheme://host[:port]/some/prefix" into the client origin and the
/// path prefix.
std::pair<std::string, std::string> split_url(const std::string& url) {
    const std::size_t scheme = url.find("://");
    if (scheme == std::string::npos) throw IoError("malformed base url '" + url + "'");
    const std::size_t path = url.find('/', scheme + 3);
    if (path == std::string::npos) return {url, ""};
    return {url.substr(0, path), url.substr(path)};
}

std::vector<std::uint8_t> http_get(const std::string& base_url, const std::string& file) {
    const auto [origin, prefix] = split_url(base_url);
    httplib::Client client(origin);
    client.set_follow_location(true);
    client.set_connection_timeout(30);
    client.set_read_timeout(300);
    const std::string path = prefix + "/" + file;
    httplib::Result res = client.Get(path);
    if (!res)
        throw IoError("download of " + origin + path + " failed: " +
                      httplib::to_string(res.error()));
    if (res->status != 200)
        throw IoError("download of " + origin + path + " failed with HTTP status " +
                      std::to_string(res->status));
    return {res->body.begin(), res->body.end()};
}

std::size_t parse_octal(const char* p, std::size_t n) {
    std::size_t v = 0;
    for (std::size_t i = 0; i < n && p[i] != '\0' && p[i] != ' '; ++i) {
        if (p[i] < '0' || p[i] > '7') throw IoError("corrupt tar header (non-octal size)");
        v = v * 8 + static_cast<std::size_t>(p[i] - '0');
    }
    return v;
}

void check_safe_path(const std::string& name) {
    if (name.empty() || name.front() == '/')
        throw IoError("tar entry with absolute path rejected: '" + name + "'");
    std::size_t start = 0;
    while (start <= name.size()) {
        const std::size_t end = std::min(name.find('/', start), name.size());
        if (name.substr(start, end - start) == "..")
            throw IoError("tar entry escaping the destination rejected: '" + name + "'");
        start = end + 1;
    }
}

}  // namespace

std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& compressed) {
    z_stream strm{};
    // 15 window bits + 32: auto-detect gzip or zlib framing.
    if (inflateInit2(&strm, 15 + 32) != Z_OK) throw IoError("zlib initialization failed");
    std::vector<std::uint8_t> out;
    std::vector<std::uint8_t> buf(1 << 20);
    strm.next_in = const_cast<Bytef*>(compressed.data());
    strm.avail_in = static_cast<uInt>(compressed.size());
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        strm.next_out = buf.data();
        strm.avail_out = static_cast<uInt>(buf.size());
        rc = inflate(&strm, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&strm);
            throw IoError("corrupt gzip stream (zlib error " + std::to_string(rc) + ")");
        }
        out.insert(out.end(), buf.data(), buf.data() + (buf.size() - strm.avail_out));
        if (rc != Z_STREAM_END && strm.avail_in == 0 && strm.avail_out != 0) {
            inflateEnd(&strm);
            throw IoError("truncated gzip stream");
        }
    }
    inflateEnd(&strm);
    return out;
}

void extract_tar(const std::vector<std::uint8_t>& archive, const fs::path& dest) {
    constexpr std::size_t kBlock = 512;
    std::size_t off = 0;
    while (off + kBlock <= archive.size()) {
        const char* hdr = reinterpret_cast<const char*>(archive.data() + off);
        bool all_zero = true;
        for (std::size_t i = 0; i < kBlock; ++i)
            if (hdr[i] != '\0') {
                all_zero = false;
                break;
            }
        if (all_zero) break;  // end-of-archive marker

        std::string name(hdr, strnlen(hdr, 100));
        if (std::memcmp(hdr + 257, "ustar", 5) == 0) {
            const std::string prefix(hdr + 345, strnlen(hdr + 345, 155));
            if (!prefix.empty()) name = prefix + "/" + name;
        }
        const std::size_t size = parse_octal(hdr + 124, 12);
        const char type = hdr[156];
        off += kBlock;
        if (off + size > archive.size()) throw IoError("truncated tar archive");

        check_safe_path(name);
        const fs::path target = dest / name;
        if (type == '5') {
            fs::create_directories(target);
        } else if (type == '0' || type == '\0') {
            fs::create_directories(target.parent_path());
            std::ofstream out(target, std::ios::binary);
            if (!out) throw IoError("cannot write " + target.string());
            out.write(reinterpret_cast<const char*>(archive.data() + off),
                      static_cast<std::streamsize>(size));
        }
        // other entry types (links, devices) are skipped

        off += (size + kBlock - 1) / kBlock * kBlock;
    }
}

bool dataset_files_present(const std::string& dataset_id, const fs::path& data_root) {
    const DatasetFiles d = dataset_files(dataset_id);
    for (const std::string& f : d.files)
        if (!fs::exists(data_root / f)) return false;
    return true;
}

void fetch_dataset(const std::string& dataset_id, const fs::path& data_root,
                   const std::string& base_url) {
    const DatasetFiles d = dataset_files(dataset_id);
    if (d.files.empty()) return;  // procedural dataset, nothing to fetch
    if (dataset_files_present(dataset_id, data_root)) return;

    fs::create_directories(data_root);
    const std::vector<std::uint8_t> gz = http_get(base_url, d.archive);
    const std::vector<std::uint8_t> tar = gunzip(gz);
    extract_tar(tar, data_root);

    for (const std::string& f : d.files)
        if (!fs::exists(data_root / f))
            throw IoError("archive " + d.archive + " did not contain expected file " + f);
}

}  // namespace veil
