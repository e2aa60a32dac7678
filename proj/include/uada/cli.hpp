#ifndef UADA_CLI_HPP
#define UADA_CLI_HPP

// The `uada` command line. Exit codes: 0 success, 1 usage error, 2 runtime
// error.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace uada {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_command(int argc, char** argv);

// A run directory is assembled under a temporary sibling and renamed into
// place on commit, so a crashed run never leaves a partial directory behind.
class RunDirectory {
public:
    RunDirectory(std::filesystem::path target, bool force);
    ~RunDirectory();
    RunDirectory(const RunDirectory&) = delete;
    RunDirectory& operator=(const RunDirectory&) = delete;

    const std::filesystem::path& staging() const noexcept { return staging_; }
    const std::filesystem::path& target() const noexcept { return target_; }
    void commit();

private:
    std::filesystem::path target_, staging_;
    bool committed_ = false;
};

}  // namespace uada

#endif  // UADA_CLI_HPP
