import os
from dotenv import load_dotenv

basedir = os.path.abspath(os.path.dirname(__file__))
load_dotenv(os.path.join(basedir, '.env'))


class Config:
    # PPD_LAPLACE_THREADS is read where workers are spawned (ppd.config.worker_count)
    LOG_LEVEL = os.environ.get('PPD_LAPLACE_LOG_LEVEL') or 'INFO'
    LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

    OUTPUT_DIR = os.environ.get('PPD_LAPLACE_OUTPUT_DIR') or os.path.join(basedir, 'runs')
