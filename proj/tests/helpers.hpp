#pragma once

#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "srne/expr.hpp"

namespace testing {

inline srne::Expression E(const std::string& preorder)
{
    std::istringstream in(preorder);
    std::vector<std::string> names;
    for (std::string s; in >> s;) {
        names.push_back(s);
    }
    return srne::from_preorder_names(names);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name)
{
    const auto p = std::filesystem::temp_directory_path() / ("srne_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace testing
