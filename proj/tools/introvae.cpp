#include "commands.hpp"

int main(int argc, char** argv) { return introvae::cli::run_cli(argc, argv); }
