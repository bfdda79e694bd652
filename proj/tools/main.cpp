#include "topoens/cli.hpp"

int main(int argc, char** argv) { return topoens::cli::Run(argc, argv); }
