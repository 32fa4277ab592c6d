from semcvdcm.app import main

raise SystemExit(main())
