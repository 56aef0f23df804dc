// Built with LMBIS_FAULT_INJECT_GRAD: the ReLU backward is off by 1%.
// Exits 0 only if the self check catches it.
#include <cstdio>

#include "lmbis/selfcheck.hpp"

int main() {
    const auto items = lmbis::run_self_check({4, 1});
    for (const auto& item : items) {
        if (item.name == "relu" || item.name == "end_to_end") {
            std::printf("%s max_rel_err %.3e\n", item.name.c_str(), item.max_err);
            if (item.pass()) {
                std::printf("FAIL: injected fault in %s went undetected\n", item.name.c_str());
                return 1;
            }
        }
    }
    std::printf("PASS: injected gradient fault detected\n");
    return 0;
}
