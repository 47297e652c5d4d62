from fedlens.cli import main

main()
