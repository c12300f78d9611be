#pragma once

// Shared oracles and fixtures for the test suites. Everything here is
// independent of the library's computation paths on purpose.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace testutil {

/// Eigenvalues of a dense symmetric matrix via cyclic Jacobi rotations.
/// Plenty for the n <= 12 oracle cases.
inline std::vector<double> jacobi_eigenvalues(std::vector<double> a, std::size_t n) {
    auto off = [&a, n] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j) s += a[i * n + j] * a[i * n + j];
        return s;
    };
    for (int sweep = 0; sweep < 100 && off() > 1e-24; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double app = a[p * n + p], aqq = a[q * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k * n + p], akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p * n + k], aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> eig(n);
    for (std::size_t i = 0; i < n; ++i) eig[i] = a[i * n + i];
    return eig;
}

/// Direct dense cross-correlation, written independently of the library.
inline std::vector<double> oracle_conv2d(const std::vector<double>& image, std::size_t H,
                                         std::size_t W, std::size_t C,
                                         const std::vector<double>& kernels, std::size_t K,
                                         std::size_t kh, std::size_t kw) {
    const std::size_t oh = H - kh + 1, ow = W - kw + 1;
    std::vector<double> out(oh * ow * K, 0.0);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                double s = 0.0;
                for (std::size_t dy = 0; dy < kh; ++dy)
                    for (std::size_t dx = 0; dx < kw; ++dx)
                        for (std::size_t c = 0; c < C; ++c)
                            s += image[((y + dy) * W + (x + dx)) * C + c] *
                                 kernels[((k * kh + dy) * kw + dx) * C + c];
                out[(y * ow + x) * K + k] = s;
            }
    return out;
}

/// Fresh scratch directory under the system temp root.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path();
        for (int i = 0; i < 10000; ++i) {
            auto candidate = base / (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(i));
            std::error_code ec;
            if (std::filesystem::create_directories(candidate, ec)) {
                path_ = candidate;
                return;
            }
        }
        throw std::runtime_error("could not create a temp dir");
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(is),
                                      std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream os(p, std::ios::binary);
    os.write(bytes.data(), static_cast<long>(bytes.size()));
}

}  // namespace testutil
