#include "bnrl/fetch.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <fstream>
#include <vector>

#include "bnrl/errors.hpp"

// httplib is used for plain-http dataset fetches only
#include <httplib.h>

namespace bnrl::data {

namespace {

struct MnistFile {
    const char* name;     // uncompressed IDX file name
    const char* sha256;   // pinned checksum of the uncompressed file
};

// Canonical MNIST checksums; also recorded in docs/mnist_files.md
constexpr MnistFile kFiles[4] = {
    {"train-images-idx3-ubyte",
     "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db"},
    {"train-labels-idx1-ubyte",
     "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5"},
    {"t10k-images-idx3-ubyte",
     "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7"},
    {"t10k-labels-idx1-ubyte",
     "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2"},
};

std::vector<unsigned char> gunzip(const std::vector<unsigned char>& compressed) {
    z_stream strm{};
    // 16 + MAX_WBITS: gzip container
    if (inflateInit2(&strm, 16 + MAX_WBITS) != Z_OK) {
        throw FormatError("gunzip: inflateInit failed");
    }
    std::vector<unsigned char> out;
    std::vector<unsigned char> buf(1 << 16);
    strm.next_in = const_cast<unsigned char*>(compressed.data());
    strm.avail_in = static_cast<uInt>(compressed.size());
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        strm.next_out = buf.data();
        strm.avail_out = static_cast<uInt>(buf.size());
        rc = inflate(&strm, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&strm);
            throw FormatError("gunzip: corrupt gzip stream");
        }
        out.insert(out.end(), buf.data(),
                   buf.data() + (buf.size() - strm.avail_out));
    }
    inflateEnd(&strm);
    return out;
}

void write_file(const std::filesystem::path& path,
                const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("cannot write " + path.string());
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void ensure_file(const std::filesystem::path& data_dir, const MnistFile& file,
                 const std::string& base_url) {
    namespace fs = std::filesystem;
    const fs::path target = data_dir / file.name;
    const fs::path gz = data_dir / (std::string(file.name) + ".gz");

    if (fs::exists(target)) {
        if (sha256_file(target) == file.sha256) return;  // cache hit
        const fs::path quarantine = target.string() + ".corrupt";
        fs::rename(target, quarantine);
        throw IntegrityError(target.string() +
                             ": checksum mismatch, quarantined as " +
                             quarantine.string());
    }

    std::vector<unsigned char> compressed;
    if (fs::exists(gz)) {
        compressed = read_file(gz);
    } else {
        // strip scheme for httplib host:port form
        std::string url = base_url;
        if (url.rfind("http://", 0) == 0) url = url.substr(7);
        const auto slash = url.find('/');
        const std::string host = url.substr(0, slash);
        const std::string prefix = (slash == std::string::npos)
                                       ? std::string()
                                       : url.substr(slash);
        httplib::Client client(host);
        client.set_connection_timeout(10);
        auto res = client.Get(prefix + "/" + file.name + ".gz");
        if (!res || res->status != 200) {
            throw FetchError(std::string("cannot download ") + file.name +
                             ".gz (offline and no cached copy)");
        }
        compressed.assign(res->body.begin(), res->body.end());
        write_file(gz, compressed);
    }

    write_file(target, gunzip(compressed));
    if (sha256_file(target) != file.sha256) {
        const fs::path quarantine = target.string() + ".corrupt";
        fs::rename(target, quarantine);
        throw IntegrityError(target.string() +
                             ": checksum mismatch after download, quarantined");
    }
}

}  // namespace

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

MnistPaths fetch_mnist(const std::filesystem::path& data_dir,
                       const std::string& base_url) {
    std::filesystem::create_directories(data_dir);
    for (const auto& file : kFiles) ensure_file(data_dir, file, base_url);
    return {data_dir / kFiles[0].name, data_dir / kFiles[1].name,
            data_dir / kFiles[2].name, data_dir / kFiles[3].name};
}

}  // namespace bnrl::data
