#include "eva/cli.hpp"

int main(int argc, char** argv) { return eva::cli::run(std::vector<std::string>(argv + 1, argv + argc)); }
