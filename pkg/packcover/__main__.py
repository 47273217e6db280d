from packcover.cli import main

main()
