#include <accnet/cli.hpp>

int main(int argc, char** argv) { return accnet::cli::run_cli(argc, argv); }
