#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstring>
#include <string>

// Path to the ocular CLI binary, injected by ctest as --cli=<path>; the CLI
// integration tests skip themselves when it is absent.
std::string g_ocular_cli_path;

int main(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        if (std::strncmp(argv[i], "--cli=", 6) == 0) g_ocular_cli_path = argv[i] + 6;
    }
    doctest::Context context;
    context.applyCommandLine(argc, argv);
    return context.run();
}
