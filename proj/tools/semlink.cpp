#include "semlink/harness.hpp"

int main(int argc, char** argv) { return semlink::cli_main(argc, argv); }
