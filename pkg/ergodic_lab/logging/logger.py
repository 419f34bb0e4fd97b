import logging
import os
from datetime import datetime

# One log file per verifier run; reports never go here.
LOG_FILE=f"ergodic_lab_{datetime.now().strftime('%m_%d_%Y_%H_%M_%S')}.log"

logs_path=os.environ.get("ERGODIC_LAB_LOG_DIR",os.path.join(os.getcwd(),"logs"))
os.makedirs(logs_path,exist_ok=True)

LOG_FILE_PATH=os.path.join(logs_path,LOG_FILE)

LOG_LEVEL=os.environ.get("ERGODIC_LAB_LOG_LEVEL","INFO").upper()

logging.basicConfig(
    filename=LOG_FILE_PATH,
    format="[ %(asctime)s ] %(lineno)s %(name)s - %(levelname)s - %(message)s",
    level=getattr(logging,LOG_LEVEL,logging.INFO),
)

