#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "mmedpo/rng.hpp"
#include "mmedpo/types.hpp"

namespace testing {

/// Fresh scratch directory under the system temp dir, removed on scope exit.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("mmedpo-" + tag + "-" + std::to_string(mmedpo::fnv1a64(tag) ^ counter()++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

private:
    static unsigned long& counter() {
        static unsigned long c = static_cast<unsigned long>(::getpid());
        return c;
    }
    std::filesystem::path path_;
};

inline mmedpo::ImageTensor random_image(std::size_t h, std::size_t w, std::size_t c, mmedpo::Rng& rng) {
    mmedpo::ImageTensor img(h, w, c);
    for (auto& v : img.data()) v = static_cast<float>(rng.gaussian());
    return img;
}

/// Mixed text and lesion pairs over `words`, weights in [0.75, 1.25].
inline std::vector<mmedpo::PreferencePair> random_pairs(const std::vector<std::string>& words, std::size_t n,
                                                         std::size_t channels, mmedpo::Rng& rng) {
    std::vector<mmedpo::PreferencePair> out;
    const auto pick = [&] { return words[rng.below(words.size())]; };
    for (std::size_t i = 0; i < n; ++i) {
        mmedpo::PreferencePair p;
        p.sample_id = "p" + std::to_string(i);
        p.input_image = random_image(2, 2, channels, rng);
        p.query = {pick()};
        p.preferred = {pick(), pick()};
        if (i % 2 == 0) {
            p.source = mmedpo::PairSource::TextHallucination;
            p.dispreferred = {pick()};
        } else {
            p.source = mmedpo::PairSource::LesionNoise;
            p.dispreferred = p.preferred;
            p.dispreferred_image = random_image(2, 2, channels, rng);
        }
        p.weight = rng.uniform(0.75, 1.25);
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace testing
